use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum CrustError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid dataset parameters: {0}")]
    InvalidSpec(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("problem too large for exhaustive search: {0}")]
    ScaleExceeded(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CrustError>;
