use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid Hurst parameter {0}: covariance formulas need 1/2 < H < 1")]
    InvalidHurst(f64),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate Gaussian law (|rho| = 1)")]
    DegenerateDensity,

    #[error("singular pairing on the diagonal tau = sigma: {0}")]
    SingularPairing(String),

    #[error("quadrature did not reach tolerance {tolerance:e}: estimate {estimate}, achieved {achieved:e}")]
    NonConvergence {
        estimate: f64,
        previous: f64,
        achieved: f64,
        tolerance: f64,
    },

    #[error("coefficient has atoms in its derivative: {0}")]
    AtomsNotSupported(String),

    #[error("path generation failed: {0}")]
    Generation(String),

    #[error("oracle size limit exceeded: {0}")]
    TooLarge(String),

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
