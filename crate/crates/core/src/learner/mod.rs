//! Small from-scratch neural-network core: dense tensors, conv/pool/linear
//! layers with hand-written backward passes, AdamW/SGD, the training loops
//! and the checkpoint format.

mod checkpoint;
mod layers;
mod network;
mod optim;
mod tensor;
mod train;

pub use checkpoint::{Checkpoint, CheckpointError, TrainingMetadata, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{Cache, Layer, LayerSpec, Mode};
pub use network::{cross_entropy, softmax, Grads, ModelKind, Network, Trace, COUGH_CHANNELS, COUGH_INPUT, DROPOUT};
pub use optim::{step_decay_lr, Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tensor::{Real, Tensor};
pub use train::{
    build_context_data, load_cough_data, run_training, train_context, train_cough, ContextData, CoughData, EpochRecord,
    TrainConfig, TrainError, TrainOutcome, TrainTask,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("label {0} is not a class index in {{0, 1}}")]
    BadLabel(usize),
    #[error("non-finite gradient in layer {layer} at parameter {index}")]
    NonFiniteGradient { layer: usize, index: usize },
    #[error("invalid architecture: {0}")]
    Architecture(String),
}
