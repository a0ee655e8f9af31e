use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: line {line}: {message}")]
    Config { path: PathBuf, line: usize, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] longsurv::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 bad input or config, 3 not enough data, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        use longsurv::Error as E;
        match self {
            CliError::Config { .. } | CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Core(e) => match e {
                E::InsufficientData(_) | E::NoEvents | E::Undefined(_) => 3,
                E::Diverged { .. } | E::Degenerate(_) | E::Tensor(_) => 4,
                _ => 2,
            },
        }
    }
}
