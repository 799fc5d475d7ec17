use std::path::Path;

use moser_core::ErrorKind;
use serde::Serialize;

/// Anything a command can fail with, mapped onto a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] moser_core::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Check(String),
}

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub code: String,
    pub exit: i32,
    pub message: String,
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn format(path: &Path, message: impl ToString) -> Self {
        CliError::Format { path: path.display().to_string(), message: message.to_string() }
    }

    /// 2 precondition, 3 validation, 4 size, 5 solver.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Precondition => 2,
                ErrorKind::Validation => 3,
                ErrorKind::Size => 4,
                ErrorKind::Solver => 5,
            },
            CliError::Io { .. } | CliError::Format { .. } | CliError::Usage(_) => 2,
            CliError::Check(_) => 5,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::Usage(_) => "usage",
            CliError::Check(_) => "check_failed",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport { code: self.code().to_string(), exit: self.exit_code(), message: self.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;
