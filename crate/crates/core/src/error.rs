use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("quadrature did not converge: best estimate {estimate} (error bound {error_bound:e})")]
    Accuracy { estimate: f64, error_bound: f64 },

    #[error("no sign change on bracket: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    Bracketing { f_lo: f64, f_hi: f64 },

    #[error("splitting point {p} outside [{min}, {max}]")]
    InvalidSplit { p: usize, min: usize, max: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "loss probability {target} not reachable for m in [{m_lo}, {m_hi}] \
         (achievable probabilities {p_at_lo} .. {p_at_hi})"
    )]
    Calibration {
        target: f64,
        m_lo: f64,
        m_hi: f64,
        p_at_lo: f64,
        p_at_hi: f64,
    },

    #[error("training diverged at step {step}")]
    TrainingFailure { step: usize },

    #[error("reward surrogate requested before one was fitted")]
    UnavailableSurrogate,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
