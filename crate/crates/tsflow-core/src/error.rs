use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid value in series '{id}' at index {index}: {msg}")]
    InvalidValue { id: String, index: usize, msg: String },

    #[error("series '{id}' too short: length {len}, need at least {required}")]
    SeriesTooShort { id: String, len: usize, required: usize },

    #[error("covariance not positive definite after jitter escalation (final jitter {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
