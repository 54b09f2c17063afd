use thiserror::Error;

/// Errors raised by the sampling, estimation and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite parameter value in {0}")]
    NonFiniteParameter(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible start: objective is not finite at the initial point")]
    InfeasibleStart,

    #[error("point lies on or outside the support boundary: {0}")]
    SupportBoundary(String),

    #[error("stage-1 optimization did not converge (gradient sup-norm {gradient_norm:e})")]
    StageOneFailed { gradient_norm: f64 },

    #[error("stage-2 optimization did not converge (gradient sup-norm {gradient_norm:e})")]
    StageTwoFailed { gradient_norm: f64 },

    #[error("information matrix singular: {which} has condition number {condition:e}")]
    SingularInformation { which: &'static str, condition: f64 },

    #[error("matrix is not positive semi-definite: {0}")]
    NotPositiveSemiDefinite(String),

    #[error("Scenario 2 requires paired data")]
    RequiresPairedData,

    #[error("Scenario 2 covariance requires paired data")]
    MissingCrossInformation,

    #[error("{failed} of {total} draws failed to converge (limit 5%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("{0}")]
    Unsupported(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
