use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("input {got:?} is not divisible by {multiple} (2^depth)")]
    Divisibility { got: (usize, usize), multiple: usize },

    #[error("plane {plane:?} is smaller than patch size {patch}")]
    PlaneTooSmall { plane: (usize, usize), patch: usize },

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint model spec does not match: expected {expected}, found {found}")]
    SpecMismatch { expected: String, found: String },

    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(PathBuf),

    #[error(transparent)]
    Image(#[from] contrast_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;
