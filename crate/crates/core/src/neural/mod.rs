//! Closed set of differentiable layers with hand-written backward passes,
//! the Adam optimizer, a finite-difference gradient checker, and the binary
//! checkpoint format.
//!
//! All arithmetic runs in `f64`. Under [`Precision::Single`] parameter values
//! and optimizer moments are rounded to `f32` after every update, so the
//! in-memory model is exactly what a checkpoint stores.

mod checkpoint;
mod gradcheck;
mod layers;
mod optim;
mod param;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointEntry, CHECKPOINT_MAGIC};
pub use gradcheck::{gradient_check, Differentiable, GradCheckOptions, GradCheckReport};
pub use layers::{
    softmax_cross_entropy, softmax_rows, tanh_backward, tanh_forward, Embedding, Linear, LstmCell,
    LstmRun, LstmState,
};
pub use optim::{adam_step, clip_global_norm, OptimizerConfig, StepStats};
pub use param::{ParamId, ParamSet, Parameter, Precision};
pub use tensor::{accumulate_tn, axpy, dot, matmul_nn, matmul_nt, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("{layer}: shape mismatch: {detail}")]
    Shape { layer: String, detail: String },
    #[error("non-finite gradient in parameter {0:?}")]
    NonFiniteGradient(String),
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl NeuralError {
    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Self::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }
}
