use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the estimation, inference and harness stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// Cholesky failed even after the jitter retry.
    #[error("matrix not positive definite after ridge (smallest pivot {pivot:.3e} at row {row})")]
    Singular { pivot: f64, row: usize },

    #[error("regularized Gram matrix is singular (smallest eigenvalue {lambda_min:.3e})")]
    SingularGram { lambda_min: f64 },

    #[error("degenerate estimate: {0}")]
    Degenerate(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("log schema error: {0}")]
    Schema(String),

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

/// Rejects NaN and infinities with a message naming the offending quantity.
pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Domain(format!(
            "{what}[{i}] is not finite ({})",
            values[i]
        ))),
    }
}
