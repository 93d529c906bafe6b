//! Cough- and context-based screening pipeline.
//!
//! - [`dsp`]: WAV decoding, resampling and log-melspectrogram featurization.
//! - [`augment`]: cropping, noise mixing and spectrogram masking.
//! - [`cohort`]: manifest ingestion, context encoding and cohort splits.
//! - [`learner`]: networks, training loops and checkpoints.
//! - [`inference`]: segment, recording and individual scoring.
//! - [`evaluation`]: ROC-AUC, stratified reports and the label-noise table.
//! - [`explain`]: saliency maps and local surrogate attributions.
//! - [`synth`]: synthetic corpora with known ground truth.

pub mod augment;
pub mod cohort;
pub mod dsp;
pub mod evaluation;
pub mod explain;
pub mod inference;
pub mod learner;
pub mod synth;
pub mod tensor_file;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator used throughout the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}
