use std::path::PathBuf;

use crust_core::CrustError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad manifest, arguments, environment or missing input.
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] CrustError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(CrustError::Divergence { .. }) => 3,
            _ => 1,
        }
    }
}
