use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of bounds (length {len})")]
    OutOfBounds { index: usize, len: usize },

    #[error("bitmap length mismatch: {left} vs {right}")]
    BitmapLengthMismatch { left: u32, right: u32 },

    #[error("empty descriptor set for image {0}")]
    EmptyDescriptorSet(u32),

    #[error("unknown image id {0}")]
    UnknownImage(u32),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("index build error: {0}")]
    Build(String),

    #[error("query error: {0}")]
    Query(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
