//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by map updates, calibration, policies, and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("concentration parameters must be finite and strictly positive")]
    InvalidConcentration,

    #[error("invalid score vector: {0}")]
    InvalidScores(String),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("all grid cells already visited")]
    Exhausted,

    #[error("no calibration parameters available for class {class} at any backoff level")]
    CalibrationUnavailable { class: usize },

    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("{0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{context}: {source}")]
    Json {
        context: String,
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
