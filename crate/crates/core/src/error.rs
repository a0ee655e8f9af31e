use std::path::PathBuf;

use tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("undefined scenario: {0}")]
    Undefined(String),
    #[error("undefined partial likelihood: no events")]
    NoEvents,
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("{path}: line {line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by NaN/Inf or divergence rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::Tensor(TensorError::NonFinite(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
