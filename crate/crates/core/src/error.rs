use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants are grouped by who is at fault: `Parameter`, `Structure`, `Size`
/// and `Allocation` reject caller input, `Numerical` reports a
/// factorization that did not converge, `Config` rejects an experiment
/// description before any trial runs, and `Internal` flags a broken
/// invariant inside the mechanism itself.
#[derive(Debug, Error)]
pub enum MvgError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("structure error: {0}")]
    Structure(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("allocation error: {0}")]
    Allocation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, MvgError>;

impl MvgError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        MvgError::Parameter(msg.into())
    }

    pub(crate) fn structure(msg: impl Into<String>) -> Self {
        MvgError::Structure(msg.into())
    }
}

impl From<csv::Error> for MvgError {
    fn from(e: csv::Error) -> Self {
        MvgError::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for MvgError {
    fn from(e: serde_json::Error) -> Self {
        MvgError::Parse(e.to_string())
    }
}
