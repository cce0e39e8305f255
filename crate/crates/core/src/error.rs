use std::path::PathBuf;

use numcore::NumError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),

    #[error("unknown action unit AU{0}")]
    UnknownAu(u32),

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss { epoch: usize, step: usize, detail: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by invalid configuration rather than data or numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }

    /// True when training stopped on a non-finite value.
    pub fn is_numeric_abort(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. } | Error::Num(NumError::NonFinite { .. }))
    }
}
