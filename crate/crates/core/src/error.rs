use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by generators, oracles, recovery drivers and file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range for dimension {dim}")]
    OutOfRange { index: usize, dim: usize },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("recursion depth {depth} exceeded limit {limit}: {context}")]
    DepthExceeded {
        depth: usize,
        limit: usize,
        context: String,
    },

    #[error("retries exhausted after {attempts} attempts: {context}")]
    RetriesExhausted { attempts: usize, context: String },

    #[error("rank inconsistency: {0}")]
    RankInconsistency(String),

    #[error("parse error in {what} at line {line}: {message}")]
    Parse {
        what: &'static str,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            what,
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
