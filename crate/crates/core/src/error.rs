use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid plane: {0}")]
    InvalidPlane(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input")]
    EmptyInput,

    #[error("constant plane: normalization range is zero")]
    ConstantPlane,

    #[error("degenerate contrast: median coefficient is zero")]
    DegenerateContrast,

    #[error("background floor is zero: median intensity must be positive")]
    NonPositiveMedian,

    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),

    #[error("unsupported channel count: {0}")]
    UnsupportedChannels(u16),

    #[error("unsupported sample format: {0}")]
    UnsupportedFormat(String),

    #[error("inconsistent page dimensions: page {page} is {got:?}, expected {expected:?}")]
    InconsistentPages {
        page: usize,
        got: (usize, usize),
        expected: (usize, usize),
    },

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("tiff: {0}")]
    Tiff(#[from] tiff::TiffError),
}

pub type Result<T> = std::result::Result<T, Error>;
