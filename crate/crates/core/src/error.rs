use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid sequence{}: {message}", .line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Validation { line: Option<usize>, message: String },

    #[error("invalid catalog: {0}")]
    Catalog(String),

    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),

    #[error("predicate index {0} out of range")]
    PredicateIndex(usize),

    #[error("invalid rule: {0}")]
    Rule(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("event {event} of sequence {sequence} has zero density under every component")]
    Unexplained { sequence: usize, event: usize },

    #[error("simulation retry budget exhausted after {attempts} attempts for sequence {sequence}")]
    RetryBudget { sequence: usize, attempts: usize },

    #[error("catalog mismatch: {0}")]
    CatalogMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation {
            line: None,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
