use thiserror::Error;

/// Errors raised by the solvers and generators.
///
/// Infeasible or unconverged solves are not errors; they are reported through
/// [`crate::SolveStatus`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("theta must be strictly positive, got {0}")]
    NonPositiveTheta(f64),

    #[error("closed-form theta needs at least one active entry")]
    EmptyActiveSets,

    #[error("instance has no positive channel gain")]
    NoGains,

    #[error("rate floor of user {user} is unreachable: no usable subcarrier")]
    FloorUnreachable { user: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("channel Gram matrix on subcarrier {subcarrier} is numerically singular (condition {condition:e})")]
    SingularGram { subcarrier: usize, condition: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
