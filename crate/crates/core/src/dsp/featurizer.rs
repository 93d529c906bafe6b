use serde::{Deserialize, Serialize};

use super::mel::{log_mel, mel_filterbank, MelConfig, MelFilterbank};
use super::stft::{stft, StftConfig};
use super::{AudioBuffer, DspError};

/// A `[n_mels × frames]` log-melspectrogram, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelPatch {
    pub n_mels: usize,
    pub frames: usize,
    pub values: Vec<f32>,
    /// The rescale divisor once applied; `None` for raw log-mel values.
    pub scale_applied: Option<f32>,
}

impl LogMelPatch {
    pub fn new(n_mels: usize, frames: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), n_mels * frames, "patch data length");
        Self {
            n_mels,
            frames,
            values,
            scale_applied: None,
        }
    }

    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.frames + frame]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_mels, self.frames)
    }

    pub fn mean(&self) -> f32 {
        let sum: f64 = self.values.iter().map(|&v| v as f64).sum();
        (sum / self.values.len() as f64) as f32
    }

    pub fn max_abs(&self) -> f32 {
        self.values.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Divides by `scale` and clamps into `[-1, 1]`.
    pub fn rescaled(&self, scale: f32) -> Result<LogMelPatch, DspError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(DspError::BadScale(scale));
        }
        Ok(LogMelPatch {
            n_mels: self.n_mels,
            frames: self.frames,
            values: self
                .values
                .iter()
                .map(|v| (v / scale).clamp(-1.0, 1.0))
                .collect(),
            scale_applied: Some(scale),
        })
    }
}

/// Largest absolute log-mel value over the training patches.
pub fn fit_rescale<'a, I>(train_patches: I) -> Result<f32, DspError>
where
    I: IntoIterator<Item = &'a LogMelPatch>,
{
    let mut seen = false;
    let mut scale = 0.0f32;
    for p in train_patches {
        seen = true;
        scale = scale.max(p.max_abs());
    }
    if !seen {
        return Err(DspError::EmptyTrainingSet);
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(DspError::BadScale(scale));
    }
    Ok(scale)
}

/// Every knob of the featurization chain. Stored inside checkpoints so a
/// loaded model reproduces its inputs without external configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub stft: StftConfig,
    pub mel: MelConfig,
    /// Model input length (2 s).
    pub segment_samples: usize,
    /// Sliding-window hop used at inference (500 ms).
    pub segment_hop_samples: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            mel: MelConfig::default(),
            segment_samples: 32_000,
            segment_hop_samples: 8_000,
        }
    }
}

impl FeatureConfig {
    pub fn patch_shape(&self) -> (usize, usize) {
        (self.mel.n_mels, self.stft.frame_count(self.segment_samples))
    }
}

/// Featurization chain with a cached filterbank and an optional fitted scale.
#[derive(Debug, Clone)]
pub struct Featurizer {
    config: FeatureConfig,
    filterbank: MelFilterbank,
    scale: Option<f32>,
}

impl Featurizer {
    pub fn new(config: FeatureConfig) -> Result<Self, DspError> {
        config.stft.validate()?;
        let filterbank = mel_filterbank(&config.mel, config.stft.freq_bins())?;
        Ok(Self {
            config,
            filterbank,
            scale: None,
        })
    }

    pub fn with_scale(mut self, scale: f32) -> Result<Self, DspError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(DspError::BadScale(scale));
        }
        self.scale = Some(scale);
        Ok(self)
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn scale(&self) -> Option<f32> {
        self.scale
    }

    /// Unscaled log-mel patch.
    pub fn log_mel(&self, buf: &AudioBuffer) -> Result<LogMelPatch, DspError> {
        let spec = stft(buf, &self.config.stft)?;
        log_mel(&spec, &self.filterbank)
    }

    /// Log-mel patch, rescaled when a scale has been fitted.
    pub fn featurize(&self, buf: &AudioBuffer) -> Result<LogMelPatch, DspError> {
        let raw = self.log_mel(buf)?;
        match self.scale {
            Some(s) => raw.rescaled(s),
            None => Ok(raw),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(values: Vec<f32>) -> LogMelPatch {
        LogMelPatch::new(1, values.len(), values)
    }

    #[test]
    fn two_second_clip_is_64_by_201() {
        let f = Featurizer::new(FeatureConfig::default()).unwrap();
        let buf = AudioBuffer::new(
            (0..32_000).map(|i| (i as f32 * 0.05).sin() * 0.3).collect(),
            16_000,
        );
        let p = f.featurize(&buf).unwrap();
        assert_eq!(p.shape(), (64, 201));
        assert_eq!(FeatureConfig::default().patch_shape(), (64, 201));
    }

    #[test]
    fn rescale_is_global_max_abs() {
        let a = patch(vec![-9.3, 1.0, 2.0]);
        let b = patch(vec![4.0, -3.5]);
        let s = fit_rescale([&a, &b]).unwrap();
        assert_eq!(s, 9.3);
        let scaled: Vec<LogMelPatch> = [&a, &b].iter().map(|p| p.rescaled(s).unwrap()).collect();
        assert!(scaled.iter().all(|p| p.values.iter().all(|v| v.abs() <= 1.0)));
        assert!(scaled.iter().any(|p| p.values.iter().any(|v| v.abs() == 1.0)));
    }

    #[test]
    fn held_out_values_are_clamped() {
        let p = patch(vec![-20.0, 5.0, 12.0]).rescaled(10.0).unwrap();
        assert_eq!(p.values, vec![-1.0, 0.5, 1.0]);
        assert_eq!(p.scale_applied, Some(10.0));
    }

    #[test]
    fn empty_training_set_rejected() {
        assert_eq!(fit_rescale(std::iter::empty()), Err(DspError::EmptyTrainingSet));
    }

    #[test]
    fn deterministic() {
        let f = Featurizer::new(FeatureConfig::default()).unwrap();
        let buf = AudioBuffer::new((0..20_000).map(|i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5).collect(), 16_000);
        let a = f.featurize(&buf).unwrap();
        let b = f.featurize(&buf).unwrap();
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
