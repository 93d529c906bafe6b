//! Audio loading and log-melspectrogram featurization.
//!
//! The chain is: WAV → mono 16 kHz [`AudioBuffer`] → centered Hamming STFT
//! magnitudes → triangular mel pooling → natural log → global rescale into
//! `[-1, 1]`. A 2 s clip always yields a 64 × 201 [`LogMelPatch`].

mod audio;
mod featurizer;
mod mel;
mod resample;
mod stft;

pub use audio::{decode_wav_bytes, load_and_normalize, AudioBuffer, AudioError, TARGET_SAMPLE_RATE};
pub use featurizer::{fit_rescale, FeatureConfig, Featurizer, LogMelPatch};
pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz, MelConfig, MelFilterbank, MelScale, LOG_FLOOR};
pub use resample::resample;
pub use stft::{stft, Spectrogram, StftConfig};

use thiserror::Error;

/// Errors raised by the pure DSP stages (everything after decoding).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("buffer too short for STFT: {0} samples (need at least 2)")]
    TooShort(usize),
    #[error("invalid STFT config: {0}")]
    BadStftConfig(String),
    #[error("invalid mel config: {0}")]
    BadMelConfig(String),
    #[error("mel filter {index} has empty support; reduce n_mels or widen the frequency range")]
    EmptyFilter { index: usize },
    #[error("dimension mismatch: filterbank expects {expected} bins, spectrogram has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cannot fit rescale on an empty set of patches")]
    EmptyTrainingSet,
    #[error("rescale scale must be positive and finite, got {0}")]
    BadScale(f32),
}
