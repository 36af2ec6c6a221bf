//! Crate-wide error type.

use alloc::string::String;

/// Errors produced by the numeric core.
///
/// Statistical non-convergence is deliberately *not* an error: fitting
/// routines report it through [`crate::estimators::FitResult::converged`]
/// because convergence rates are themselves a study outcome. `Error` is
/// reserved for structurally invalid inputs and for linear-algebra
/// breakdowns that make a quantity undefined.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Input dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// A parameter is outside its admissible range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// The Fisher information is singular at the requested point.
    #[error("singular Fisher information: {0}")]
    SingularInformation(&'static str),
    /// A matrix that must be positive definite failed to factor.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    /// The contrast covariance is singular, so the Wald statistic is undefined.
    #[error("test undefined: contrast covariance is singular")]
    TestUndefined,
    /// A bracketing root search could not enclose a solution.
    #[error("root finding failed: {0}")]
    RootFinding(String),
    /// An operation that needs at least one element got none.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;
