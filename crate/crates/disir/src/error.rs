//! Error type shared by all kernels and estimators.

use core::fmt;

/// Errors surfaced by kernels, couplings and estimators.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A log importance weight came out non-finite: the proposal and target
    /// supports disagree at the evaluated point.
    SupportViolation { log_weight: f64 },
    /// Every entry of a weight vector is `-inf` (or an entry is NaN/`+inf`):
    /// nothing can be normalized.
    DegenerateWeights,
    /// A model gradient evaluated to a non-finite value at the given slot.
    NonFiniteGradient { slot: usize },
    /// Vector/matrix dimensions disagree.
    DimensionMismatch { expected: usize, got: usize },
    /// A matrix that must be positive definite failed its Cholesky
    /// factorization.
    SingularMatrix,
    /// A coupled run hit the iteration cap before the chains met and the
    /// caller asked for strict (hard-error) handling.
    CappedRun { steps: usize },
    /// Operation not supported by this model/proposal combination.
    Unsupported(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::SupportViolation { log_weight } => write!(
                f,
                "support violation: non-finite log importance weight ({log_weight})"
            ),
            Error::DegenerateWeights => write!(f, "degenerate weight vector"),
            Error::NonFiniteGradient { slot } => {
                write!(f, "non-finite gradient at importance slot {slot}")
            }
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::SingularMatrix => write!(f, "matrix is numerically singular"),
            Error::CappedRun { steps } => {
                write!(f, "coupled chains did not meet within {steps} steps")
            }
            Error::Unsupported(what) => write!(f, "unsupported operation: {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
