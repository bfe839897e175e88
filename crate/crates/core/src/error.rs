use thiserror::Error;

use crate::tensor::TensorError;
use crate::trainer::checkpoint::CheckpointError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error. The variants double as the failure classes the
/// command line maps to exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Input data violates a precondition.
    #[error("data error: {0}")]
    Data(String),
    /// Training or scoring produced a non-finite or otherwise unusable number.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self::Data(msg.into())
    }
}

/// Failure class of an [`Error`], used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Io,
    Internal,
}

impl Error {
    /// Checkpoints whose version or tensor shapes do not fit this build are
    /// configuration problems; unreadable ones are data problems.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Data(_) => ErrorKind::Data,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Io(_) => ErrorKind::Io,
            Error::Checkpoint(CheckpointError::Corrupt(_)) => ErrorKind::Data,
            Error::Checkpoint(_) => ErrorKind::Config,
            Error::Tensor(TensorError::NonFinite { .. }) => ErrorKind::Numeric,
            Error::Tensor(_) => ErrorKind::Internal,
        }
    }
}
