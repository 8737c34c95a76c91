use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("missing data: {0}")]
    Missing(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category, used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    InvalidConfig,
    MissingFile,
    Numeric,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::InvalidConfig => 2,
            ErrorCategory::MissingFile => 3,
            ErrorCategory::Numeric => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::InvalidConfig => "invalid-config",
            ErrorCategory::MissingFile => "missing-file",
            ErrorCategory::Numeric => "numeric-failure",
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Format(_) | Error::Json(_) => {
                ErrorCategory::InvalidConfig
            }
            Error::Missing(_) => ErrorCategory::MissingFile,
            Error::Io(e) if e.kind() == io::ErrorKind::NotFound => ErrorCategory::MissingFile,
            Error::Io(_) => ErrorCategory::MissingFile,
            Error::Numeric(_) | Error::Degenerate(_) => ErrorCategory::Numeric,
        }
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
