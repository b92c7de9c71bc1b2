use std::path::PathBuf;

use lpca_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed file content; `offset` is the byte where parsing stopped.
    #[error("{what} at byte {offset}: {reason}")]
    Format {
        what: String,
        offset: usize,
        reason: String,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite values or failed numeric checks.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Tensor(TensorError::NonFinite { .. }))
    }
}
