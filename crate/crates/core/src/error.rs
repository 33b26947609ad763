//! Error type shared by all modules.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or violated precondition.
    #[error("config error: {0}")]
    Config(String),

    /// Shape or dimension mismatch between arrays.
    #[error("shape error: {0}")]
    Shape(String),

    /// Non-finite values or numeric divergence; the message carries a
    /// diagnostic snapshot of the offending state.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A required input artifact is missing on disk.
    #[error("missing input: {0}")]
    MissingInput(String),

    /// A persisted artifact could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
