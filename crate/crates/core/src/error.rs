use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of its allowed range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Input data violates a precondition of the operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The simulated trial produced no events, so the stop time is undefined.
    #[error("no events occurred; study stop time is undefined")]
    NoEvents,

    /// Log density or gradient left the finite range.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Post-warmup acceptance rate fell below the abort threshold.
    #[error("sampler acceptance rate {rate:.3} below {threshold}")]
    LowAcceptance { rate: f64, threshold: f64 },

    /// Too many Monte Carlo replications failed.
    #[error("{failed} of {total} replications failed (limit {limit})")]
    TooManyFailures { failed: usize, total: usize, limit: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from bad user input rather than a runtime
    /// failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::InvalidInput(_) | Error::Parse(_) | Error::Json(_)
        )
    }
}
