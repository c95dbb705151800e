use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("size error: {0}")]
    Size(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("no metric bound available: {0}")]
    UnsupportedBound(String),

    #[error("Cholesky factorisation failed after jitter {jitter:e}")]
    Conditioning { jitter: f64 },

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver did not converge: {0}")]
    Solver(String),

    #[error("Neumann expansion diverges: ||EQ||_1 = {norm}")]
    Divergence { norm: f64 },

    #[error("rate fit failed: {0}")]
    Fit(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
