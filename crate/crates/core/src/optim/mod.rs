//! Loss, optimizer and the training loop.

mod adam;
mod loss;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{mse_loss, ray_sq_error};
pub use train::{mix_seed, train, StepMetrics, TrainConfig, Trainer};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("render failed: {0}")]
    Render(String),
    #[error("non-finite loss or gradient at step {step}\n{dump}")]
    NonFinite { step: u64, dump: String },
    #[error("{0}")]
    Callback(String),
}
