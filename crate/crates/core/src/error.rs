use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix not positive definite at pivot {pivot} (value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("negative eigenvalue {value:e} at index {index}")]
    NegativeEigenvalue { index: usize, value: f64 },

    #[error("spectral gap too small: lambda_1 = {lambda1:e}, lambda_2 = {lambda2:e}")]
    SpectralGap { lambda1: f64, lambda2: f64 },

    #[error("power iteration did not converge after {iterations} iterations (last values {previous:e}, {last:e})")]
    NoConvergence {
        iterations: usize,
        previous: f64,
        last: f64,
    },

    #[error("fit refused: {0}")]
    FitRefused(String),

    #[error("splice failed: {0}")]
    Splice(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
