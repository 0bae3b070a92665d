use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("non-finite state at step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },

    #[error("condition violated: {0}")]
    ConditionViolated(String),

    #[error("assumption ({assumption}) fails at u = {at}: {detail}")]
    AssumptionFailed {
        assumption: &'static str,
        at: f64,
        detail: String,
    },

    #[error("{failed} of {total} paths aborted (limit {limit})")]
    TooManyAborts {
        failed: usize,
        total: usize,
        limit: usize,
    },

    #[error("target infeasible within the control family: best residual {residual:.3e} at cost {cost:.6}")]
    Infeasible { residual: f64, cost: f64 },

    #[error("empty sample set")]
    EmptySample,

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { expected, got })
    }
}
