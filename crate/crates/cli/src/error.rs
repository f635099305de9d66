use std::fmt::Display;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation or configuration; exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Inputs or artifacts are missing or unusable; exit code 2.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn data(context: impl Display, err: impl Display) -> CliError {
    CliError::Data(format!("{context}: {err}"))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| data(path.display(), e))
}

pub fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    densigraph_core::ingestion::write_atomic(path, bytes).map_err(|e| data(path.display(), e))
}
