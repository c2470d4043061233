use thiserror::Error;

use crate::suggest::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("not synced: {0}; run sync first")]
    NotSynced(String),

    #[error("judgment {value} at {cell} is outside the scale [{min}, {max}]")]
    OutOfBounds {
        cell: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("no live alternative has a score")]
    Unscorable,

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported schema version {found} (this build reads version {supported})")]
    UnsupportedSchema { found: u64, supported: u64 },

    #[error("document failed validation: {0}")]
    InvalidDocument(String),

    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn not_found(msg: impl Into<String>) -> Self {
        Error::NotFound(msg.into())
    }
}
