use std::path::Path;

use enkbf_core::ErrorKind;
use thiserror::Error;

/// Failure of a CLI command, grouped by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical error: {0}")]
    Numerics(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerics(_) => 4,
            CliError::Io(_) => 5,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    /// Malformed or schema-violating JSON, with the offending line and column.
    pub fn json(path: &Path, err: serde_json::Error) -> Self {
        if err.is_io() {
            return CliError::Io(format!("{}: {err}", path.display()));
        }
        CliError::Config(format!(
            "{} (line {}, column {}): {err}",
            path.display(),
            err.line(),
            err.column()
        ))
    }
}

impl From<enkbf_core::Error> for CliError {
    fn from(e: enkbf_core::Error) -> Self {
        let msg = e.to_string();
        match e.kind() {
            ErrorKind::Config => CliError::Config(msg),
            ErrorKind::Data => CliError::Data(msg),
            ErrorKind::Numerics => CliError::Numerics(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
