use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error in {func}: {msg}")]
    Domain { func: &'static str, msg: String },

    #[error("magnitude overflow in {func}: {msg}")]
    Overflow { func: &'static str, msg: String },

    #[error(
        "quadrature did not converge: estimate {estimate:e}, error estimate {error_estimate:e} \
         after {subdivisions} subdivisions"
    )]
    Quadrature {
        estimate: f64,
        error_estimate: f64,
        subdivisions: usize,
    },

    #[error(
        "matrix of order {order} is not positive definite after jitter up to {max_jitter:e} \
         (diagonal range [{min_diag:e}, {max_diag:e}])"
    )]
    NotPositiveDefinite {
        order: usize,
        max_jitter: f64,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rescaling schedule invalid: {0}")]
    Schedule(String),

    #[error("condition violated: {0}")]
    Condition(String),

    #[error("optimization failed after {evaluations} evaluations: {reason}")]
    Optimization { evaluations: usize, reason: String },

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("scenario failure: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(func: &'static str, msg: impl Into<String>) -> Error {
    Error::Domain { func, msg: msg.into() }
}
