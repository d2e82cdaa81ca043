use thiserror::Error;

/// Errors produced by the numeric layers of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (dimension mismatch, empty data, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative routine hit its cap without meeting its stopping rule.
    /// Carries the final residual so callers can judge how bad it was.
    #[error("numeric failure in {what}: residual {residual:.3e} after iteration cap")]
    NumericFailure { what: &'static str, residual: f64 },

    /// A constraint set was detected to be empty.
    #[error("constraint set is infeasible (empty)")]
    InfeasibleSet,

    /// A (set, point) combination outside the supported dispatch table.
    #[error("unsupported case: {0}")]
    UnsupportedCase(String),

    /// A numerically estimated Hessian was not positive definite.
    #[error("degenerate Hessian: {0}")]
    DegenerateHessian(String),

    /// An enumeration would exceed a hard resource cap.
    #[error("resource limit: {0}")]
    ResourceLimit(String),

    /// Filesystem failure while reading inputs or writing reports.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
