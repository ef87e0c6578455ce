use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("input not found: {0}")]
    MissingInput(PathBuf),

    #[error("input {path} does not match the recorded hash")]
    InputChanged { path: PathBuf },

    #[error(transparent)]
    Core(#[from] contrast_core::Error),

    #[error(transparent)]
    Net(#[from] contrast_net::NetError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
