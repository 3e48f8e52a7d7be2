//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("vocabulary empty after pruning (min_count = {min_count})")]
    EmptyVocab { min_count: u64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no context")]
    NoContext,

    #[error("unknown label {label:?}; closest matches: {}", suggestions.join(", "))]
    UnknownLabel {
        label: String,
        suggestions: Vec<String>,
    },

    #[error("shape mismatch: header declares {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("non-finite value at row {row} ({label:?})")]
    NonFinite { row: usize, label: String },

    #[error("non-finite loss after {words} words; training aborted")]
    NonFiniteLoss { words: u64 },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no pseudoword occurrences to score")]
    NoOccurrences,

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
