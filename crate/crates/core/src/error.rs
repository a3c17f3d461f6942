use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, UalError>;

#[derive(Debug, Error)]
pub enum UalError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("parameter store: {0}")]
    ParameterStore(String),

    #[error("dataset hash mismatch for {path}: manifest has {expected}, file has {actual} (use --force to override)")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl UalError {
    pub fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        UalError::DimensionMismatch {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        UalError::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        UalError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            UalError::InvalidArgument(_) | UalError::InvalidField { .. } => 1,
            UalError::NonFinite { .. } => 3,
            _ => 2,
        }
    }
}
