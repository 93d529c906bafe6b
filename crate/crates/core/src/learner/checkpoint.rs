use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::layers::LayerSpec;
use super::network::{ModelKind, Network};
use super::train::{EpochRecord, TrainConfig, TrainOutcome, TrainTask};
use super::LearnerError;
use crate::cohort::EncoderState;
use crate::dsp::{FeatureConfig, Featurizer};
use crate::inference::{ContextModel, CoughModel};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("corrupt checkpoint header: {0}")]
    Header(String),
    #[error(transparent)]
    Architecture(#[from] LearnerError),
    #[error("checkpoint holds a {0:?} model")]
    WrongKind(ModelKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub task: TrainTask,
    pub best_epoch: usize,
    pub val_auc: f64,
    pub epochs_run: usize,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
}

impl TrainingMetadata {
    pub fn from_outcome<T>(task: TrainTask, config: &TrainConfig, out: &TrainOutcome<T>) -> Self {
        Self {
            task,
            best_epoch: out.best_epoch,
            val_auc: out.best_val_auc,
            epochs_run: out.history.len(),
            config: *config,
            history: out.history.clone(),
        }
    }
}

/// Trained weights plus everything needed to reproduce inference.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub feature_config: Option<FeatureConfig>,
    pub rescale: Option<f32>,
    pub encoder: Option<EncoderState>,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    param_count: usize,
    feature_config: Option<FeatureConfig>,
    rescale: Option<f32>,
    encoder: Option<EncoderState>,
    metadata: TrainingMetadata,
}

fn take<'a>(bytes: &'a [u8], at: usize, n: usize) -> Result<&'a [u8], CheckpointError> {
    bytes.get(at..at + n).ok_or(CheckpointError::Truncated {
        needed: at + n,
        have: bytes.len(),
    })
}

impl Checkpoint {
    /// Layout: magic, u32 version, u64 header length, JSON header, then the
    /// flattened f32 parameters, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.network.kind,
            input_shape: self.network.input_shape.clone(),
            layers: self.network.specs(),
            param_count: self.network.param_count(),
            feature_config: self.feature_config,
            rescale: self.rescale,
            encoder: self.encoder.clone(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 4 * header.param_count);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.network.flat_params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if take(bytes, 0, 4)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(take(bytes, 4, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version });
        }
        let hlen = u64::from_le_bytes(take(bytes, 8, 8)?.try_into().unwrap()) as usize;
        let header: Header =
            serde_json::from_slice(take(bytes, 16, hlen)?).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut network = Network::<f32>::from_specs(header.kind, header.input_shape, &header.layers)?;
        if network.param_count() != header.param_count {
            return Err(CheckpointError::Header(format!(
                "declared {} parameters, architecture has {}",
                header.param_count,
                network.param_count()
            )));
        }
        let start = 16 + hlen;
        let payload = take(bytes, start, 4 * header.param_count)?;
        if bytes.len() != start + payload.len() {
            return Err(CheckpointError::Header(format!(
                "{} trailing bytes",
                bytes.len() - start - payload.len()
            )));
        }
        let flat: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        network.set_flat_params(&flat)?;
        Ok(Self {
            network,
            feature_config: header.feature_config,
            rescale: header.rescale,
            encoder: header.encoder,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Short content hash identifying these exact weights and settings.
    pub fn version_id(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cough_model(&self) -> Result<CoughModel, CheckpointError> {
        if self.network.kind != ModelKind::CoughNet {
            return Err(CheckpointError::WrongKind(self.network.kind));
        }
        let cfg = self
            .feature_config
            .ok_or_else(|| CheckpointError::Header("cough checkpoint without feature config".into()))?;
        let mut featurizer = Featurizer::new(cfg).map_err(|e| CheckpointError::Header(e.to_string()))?;
        if let Some(s) = self.rescale {
            featurizer = featurizer.with_scale(s).map_err(|e| CheckpointError::Header(e.to_string()))?;
        }
        Ok(CoughModel {
            net: self.network.clone(),
            featurizer,
        })
    }

    pub fn context_model(&self) -> Result<ContextModel, CheckpointError> {
        if self.network.kind != ModelKind::ContextNet {
            return Err(CheckpointError::WrongKind(self.network.kind));
        }
        let encoder = self
            .encoder
            .clone()
            .ok_or_else(|| CheckpointError::Header("context checkpoint without encoder".into()))?;
        Ok(ContextModel {
            net: self.network.clone(),
            encoder,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::TrainConfig;

    fn sample() -> Checkpoint {
        Checkpoint {
            network: Network::<f32>::context_net(5, Some(4), 3),
            feature_config: None,
            rescale: None,
            encoder: Some(EncoderState { continuous: vec![], categorical: vec![] }),
            metadata: TrainingMetadata {
                task: TrainTask::CovidContext,
                best_epoch: 2,
                val_auc: 0.8,
                epochs_run: 5,
                config: TrainConfig::context_default(),
                history: vec![],
            },
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        let a: Vec<u32> = c.network.flat_params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.network.flat_params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.metadata, c.metadata);
        assert_eq!(back.version_id(), c.version_id());
    }

    #[test]
    fn awkward_floats_survive_the_header() {
        let mut c = sample();
        c.encoder = Some(EncoderState {
            continuous: vec![crate::cohort::ContinuousStat {
                name: "age".into(),
                mean: 0.1 + 0.2,
                std: 1.0 / 3.0,
                kept: true,
            }],
            categorical: vec![],
        });
        c.metadata.val_auc = 2.0f64.sqrt() / 2.0;
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.encoder, c.encoder);
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn every_truncation_is_detected() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 10, 20, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn version_and_magic_checked() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::UnsupportedVersion { found: 9 })));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn kind_is_enforced() {
        assert!(matches!(sample().cough_model(), Err(CheckpointError::WrongKind(ModelKind::ContextNet))));
        assert!(sample().context_model().is_ok());
    }
}
