use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid problem: {0}")]
    Invalid(String),

    #[error("Riccati iteration did not converge after {iterations} iterations (last step {last_residual:e}); the pair (A, B) may not be stabilizable")]
    RiccatiDiverged { iterations: usize, last_residual: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver hit its iteration limit: {0}")]
    MaxIterations(String),

    #[error("degenerate active set: {0}")]
    Degenerate(String),

    #[error("horizon search exceeded N = {nmax}; increase the maximum horizon or shrink the region of interest")]
    HorizonExceeded { nmax: usize },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("certification cannot proceed: {0}")]
    Certification(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
