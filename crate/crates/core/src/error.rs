use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("step index is 1-based, got 0")]
    ZeroStepIndex,

    #[error("invalid learning-rate schedule: gamma={gamma}, alpha={alpha} (need gamma > 0, 0.5 < alpha < 1)")]
    InvalidSchedule { gamma: f64, alpha: f64 },

    #[error("quantile level tau must lie in (0, 1), got {0}")]
    InvalidTau(f64),

    #[error("logistic label must be -1 or +1, got {0}")]
    InvalidLabel(f64),

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("non-finite gradient at step {step}{}", replicate_suffix(*.replicate))]
    NonFiniteGradient { step: u64, replicate: Option<usize> },

    #[error("iterate norm {norm:.3e} exceeded limit {limit:.3e} at step {step}{}", replicate_suffix(*.replicate))]
    Diverged {
        step: u64,
        replicate: Option<usize>,
        norm: f64,
        limit: f64,
    },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("empty observation stream")]
    EmptyStream,

    #[error("plug-in covariance is unavailable for the {0} model (no Hessian)")]
    PlugInUnavailable(&'static str),

    #[error("plug-in accumulators are not enabled for this run")]
    PlugInDisabled,

    #[error("Hessian estimate is singular or ill-conditioned (condition number {condition:.3e}, cap {cap:.3e})")]
    IllConditioned { condition: f64, cap: f64 },

    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of bounds for dimension {dim}")]
    IndexOutOfBounds { index: usize, dim: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("repetition {repetition}: {source}")]
    Repetition {
        repetition: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("observation source: {0}")]
    Source(#[source] Box<dyn std::error::Error + Send + Sync>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn replicate_suffix(replicate: Option<usize>) -> String {
    match replicate {
        Some(b) => format!(" (replicate {b})"),
        None => " (main path)".to_string(),
    }
}

impl Error {
    /// True when the error comes from numerical breakdown rather than bad
    /// input or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::NonFiniteGradient { .. }
            | Error::Diverged { .. }
            | Error::IllConditioned { .. } => true,
            Error::Repetition { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
