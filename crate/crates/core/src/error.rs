use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("degenerate prediction: raw output norm {0:e} is too small")]
    DegeneratePrediction(f64),

    #[error("unknown phrase {phrase:?} for family {family}")]
    UnknownPhrase { family: String, phrase: String },

    #[error("unknown object {phrase:?}; available: {available:?}")]
    UnknownObject { phrase: String, available: Vec<String> },

    #[error("ambiguous object {phrase:?}; candidate ids: {ids:?}")]
    Ambiguous { phrase: String, ids: Vec<usize> },

    #[error("object {object:?} has no orientation for part {part:?}")]
    UnknownPart { object: String, part: String },

    #[error("parse error at byte {offset}: expected one of {expected:?}")]
    Parse { offset: usize, expected: Vec<String> },

    #[error("format error at {path}: {message}")]
    Format { path: String, message: String },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("placement failed: {0}")]
    Placement(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
