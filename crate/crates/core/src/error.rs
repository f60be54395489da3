use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular matrix: pivot {pivot:e} at column {column}")]
    Singular { column: usize, pivot: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("non-finite value at hop {hop} in modality {modality}")]
    NonFinite { hop: usize, modality: &'static str },

    #[error("contraction violated: rho = {rho} (must be < 1)")]
    ContractViolation { rho: f64 },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("state error: {0}")]
    State(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("storage error at {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Storage {
            path: path.into(),
            source,
        }
    }
}
