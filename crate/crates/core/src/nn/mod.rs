//! Dense neural-network numerics: MLPs, activations, reverse-mode gradients,
//! the adaptive-moment optimizer and segment reductions.

mod activation;
mod loss;
mod mlp;
mod optim;
mod segment;
pub mod tape;

use thiserror::Error;

pub use activation::{sigmoid, softplus, Activation, LEAKY_RELU_SLOPE};
pub use loss::{bce_term, bce_with_logits};
pub use mlp::{mlp_forward, mlp_init, MlpParams, MlpSpec};
pub use optim::{optimizer_step, Adam, AdamState, ParamTensors, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use segment::{segment_reduce, Aggregation};
pub use tape::{grad, BoundMlp, Gradients, Tape, Var};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("invalid MLP spec: {0}")]
    InvalidSpec(String),
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error("empty input")]
    EmptyInput,
}
