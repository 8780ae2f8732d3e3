use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient history: need at least {needed} frames, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("numeric failure in {location}")]
    NumericFailure { location: String },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("empty sequence: {0}")]
    EmptySequence(String),

    #[error("checkpoint load error ({param}): {message}")]
    Load { param: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn numeric(location: impl Into<String>) -> Self {
        Error::NumericFailure {
            location: location.into(),
        }
    }

    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::InsufficientHistory { .. } => "insufficient-history",
            Error::NumericFailure { .. } => "numeric-failure",
            Error::Parse { .. } => "parse-error",
            Error::EmptySequence(_) => "empty-sequence",
            Error::Load { .. } => "load-error",
            Error::Io(_) => "io-error",
            Error::Json(_) => "json-error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
