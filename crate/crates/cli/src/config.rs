//! TOML run configuration. Every field is optional; unset fields keep the
//! built-in defaults and command-line flags override both.

use std::path::Path;

use anyhow::Context;
use cac_core::augment::{MaskConfig, NoiseMixConfig};
use cac_core::dsp::{FeatureConfig, MelScale};
use cac_core::explain::LimeConfig;
use cac_core::learner::{OptimizerKind, TrainConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub optimizer: Option<OptimizerKind>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub lr_decay_factor: Option<f64>,
    pub lr_decay_period: Option<usize>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(v) = self.optimizer {
            cfg.optimizer = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.lr_decay_factor {
            cfg.lr_decay_factor = v;
        }
        if let Some(v) = self.lr_decay_period {
            cfg.lr_decay_period = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = Some(v);
        }
        cfg
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureOverrides {
    pub n_mels: Option<usize>,
    pub f_min_hz: Option<f64>,
    pub f_max_hz: Option<f64>,
    pub mel_scale: Option<MelScale>,
    pub window_len_samples: Option<usize>,
    pub hop_samples: Option<usize>,
    pub fft_size: Option<usize>,
}

impl FeatureOverrides {
    pub fn apply(&self, mut cfg: FeatureConfig) -> FeatureConfig {
        if let Some(v) = self.n_mels {
            cfg.mel.n_mels = v;
        }
        if let Some(v) = self.f_min_hz {
            cfg.mel.f_min_hz = v;
        }
        if let Some(v) = self.f_max_hz {
            cfg.mel.f_max_hz = v;
        }
        if let Some(v) = self.mel_scale {
            cfg.mel.scale = v;
        }
        if let Some(v) = self.window_len_samples {
            cfg.stft.window_len_samples = v;
        }
        if let Some(v) = self.hop_samples {
            cfg.stft.hop_samples = v;
        }
        if let Some(v) = self.fft_size {
            cfg.stft.fft_size = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub noise: Option<NoiseMixConfig>,
    pub mask: Option<MaskConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub features: FeatureOverrides,
    pub cough: TrainOverrides,
    pub context: TrainOverrides,
    /// Width of the optional context hidden layer.
    pub context_hidden: Option<usize>,
    pub augment: AugmentSection,
    pub lime: Option<LimeConfig>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        self.features.apply(FeatureConfig::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_overrides_only_named_fields() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 3
            [cough]
            learning_rate = 0.001
            batch_size = 16
            [features]
            mel_scale = "slaney"
            "#,
        )
        .unwrap();
        let t = cfg.cough.apply(TrainConfig::cough_default());
        assert_eq!(t.learning_rate, 1e-3);
        assert_eq!(t.batch_size, 16);
        assert_eq!(t.max_epochs, 200);
        assert_eq!(cfg.feature_config().mel.scale, MelScale::Slaney);
        assert_eq!(cfg.seed, Some(3));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[cough]\nlearning_rat = 1.0").is_err());
    }
}
