use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("covariance matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The uncertainty bound Γ + iJ/2 ⪰ 0 is violated.
    #[error("invalid state: smallest eigenvalue of cov + iJ/2 is {0:e}")]
    InvalidState(f64),

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("matrix is not symplectic (|SJSᵀ - J| = {0:e})")]
    NotSymplectic(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient shots: {0}")]
    InsufficientShots(String),

    /// A linear system used for reconstruction is singular or nearly so.
    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("projection failed: {0}")]
    Projection(String),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
