use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file or table.
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    /// A single data row could not be parsed.
    #[error("{path}:{line}: {message}")]
    Row {
        path: String,
        line: u64,
        message: String,
    },

    #[error("value out of range: {0}")]
    Range(String),

    /// Inconsistent or immutable run settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Persisted chain files are missing or were modified.
    #[error("integrity error in {path}: {message}")]
    Integrity { path: PathBuf, message: String },

    #[error("unknown country code {0}")]
    UnknownCountry(u32),

    #[error("unknown parameter '{name}'; valid names: {valid}")]
    UnknownParameter { name: String, valid: String },

    #[error("{0}")]
    Invalid(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn integrity(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Integrity {
            path: path.into(),
            message: message.into(),
        }
    }
}
