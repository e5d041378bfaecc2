//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EsgError {
    #[error("correlation {name} = {value} is outside [-1, 1]")]
    CorrelationOutOfRange { name: &'static str, value: f64 },
    #[error("correlation matrix is not positive semi-definite (pivot {pivot} = {value:e})")]
    NotPositiveSemiDefinite { pivot: usize, value: f64 },
    #[error("correlation matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("degenerate correlation: {0}")]
    DegenerateCorrelation(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("theta = {theta:e} is at or below the floor")]
    ThetaUnderflow { theta: f64 },
    #[error("rho_rGamma is zero while gamma is non-zero; eta is undefined")]
    ZeroRhoRGamma,
    #[error("non-finite state")]
    NonFiniteState,
    #[error("degenerate residual: {0}")]
    DegenerateResidual(&'static str),
    #[error("closed form not applicable: {0}")]
    FormulaInapplicable(String),
    #[error("coefficient {0} has no registered partials")]
    UnsupportedCoefficient(String),
    #[error("{failed} of {total} paths failed, above the allowed rate {limit}")]
    FailureRateExceeded { failed: usize, total: usize, limit: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, EsgError>;
