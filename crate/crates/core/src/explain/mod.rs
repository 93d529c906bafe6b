//! Saliency maps for the cough model and local surrogate attributions for
//! the context model.

mod lime;
mod saliency;

pub use lime::{lime_explain, FeatureAttribution, LimeConfig};
pub use saliency::{bilinear_resize, saliency, saliency_from_activations, SaliencyMap};

use thiserror::Error;

use crate::learner::LearnerError;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("model has non-finite weights")]
    NonFiniteModel,
    #[error("model has no convolutional layer")]
    NoConvLayer,
    #[error("target class {0} out of range")]
    BadClass(usize),
    #[error(transparent)]
    Model(#[from] LearnerError),
    #[error("instance has {got} features, encoder expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("perturbation weights are all ~0 (kernel width {0})")]
    DegenerateWeights(f64),
    #[error("invalid explanation config: {0}")]
    Config(String),
    #[error("surrogate solve failed")]
    Singular,
}
