//! Library error type.

use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/vector shapes do not line up with the model dimensions.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// The innovation covariance is too ill-conditioned to solve against.
    /// Carries the offending matrix for post-mortem inspection.
    #[error("innovation covariance numerically singular (cond = {cond:.3e})")]
    SingularInnovation { cond: f64, s: DMatrix<f64> },

    /// A non-finite value (inf/NaN) showed up in the filter state.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// An operation needs more samples than are buffered.
    #[error("not enough data: {0}")]
    InsufficientData(&'static str),

    /// A matrix violated the positive-semidefiniteness tolerance.
    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    /// Rejection sampling ran out of attempts for the requested class.
    #[error("system synthesis failed: no {class} system accepted after {attempts} draws")]
    SynthesisFailed { class: String, attempts: usize },

    /// A covariance square root could not be computed even after
    /// regularization.
    #[error("covariance square-root factorization failed")]
    FactorizationFailed,

    /// Bad user-facing configuration (CLI flags, config file, overrides).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
