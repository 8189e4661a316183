use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid shape {0:?}: extents must be positive and match the value count")]
    InvalidShape(Vec<usize>),

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("ill-conditioned covariance: {0}")]
    IllConditioned(String),

    #[error("numeric degeneracy: {0}")]
    Degenerate(String),

    #[error("insufficient data: effective sample size {ess:.1} below {min}")]
    InsufficientData { ess: f64, min: f64 },

    #[error("non-finite loss at training step {step}")]
    TrainingDiverged { step: usize },

    #[error("sampler diverged at step {step} (t = {t}): {reason}")]
    Diverged { step: usize, t: f64, reason: String },

    #[error("backward step requested: sigma_next {sigma_next} > sigma_t {sigma_t}")]
    BackwardStep { sigma_t: f64, sigma_next: f64 },

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FlowError {
    fn from(err: std::io::Error) -> Self {
        FlowError::Io(err.to_string())
    }
}

pub type Result<T, E = FlowError> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> FlowError {
    FlowError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
