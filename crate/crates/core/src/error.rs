use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate conditioning: {0}")]
    DegenerateCondition(String),

    #[error("time {t} outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("switch count exceeded cap of {cap} before horizon {horizon}")]
    Explosion { cap: usize, horizon: f64 },

    #[error("quadrature did not converge: error estimate {estimate:e} above tolerance {tolerance:e}")]
    QuadratureNonConvergence { estimate: f64, tolerance: f64 },

    #[error("numeric overflow: {0}")]
    Overflow(String),

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("method not applicable: {0}")]
    MethodMismatch(String),

    #[error("precondition violated: {reason} (at {} grid times, first {:?})", .times.len(), .times.first())]
    PreconditionViolation { reason: String, times: Vec<f64> },

    #[error("grid coverage: {0}")]
    GridCoverage(String),

    #[error("price positivity violated at t={time}: 1 + h = {factor}")]
    Positivity { time: f64, factor: f64 },
}
