use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] gctx_numerics::Error),
    /// Every violated constraint, listed at once.
    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("version error: file has version {found}, this build reads {expected}")]
    Version { found: u32, expected: u32 },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing file for sample '{id}': {path}")]
    MissingFile { id: String, path: PathBuf },
    #[error("data error: {0}")]
    Data(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by non-finite values.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numerics(gctx_numerics::Error::NonFinite { .. }) | Error::Diverged { .. })
    }
}
