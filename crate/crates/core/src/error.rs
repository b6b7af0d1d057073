use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },

    #[error("scan: non-finite state at timestep {step}")]
    NonFiniteState { step: usize },

    #[error("training aborted: non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tape: {0}")]
    Tape(String),

    #[error("config: {0}")]
    Config(String),

    #[error("gradient check failed: max relative error {max_rel_error:.3e} at {location}")]
    GradCheck {
        max_rel_error: f64,
        location: String,
    },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("payload shape mismatch: {0}")]
    PayloadShape(String),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::Shape { .. } => 1,
            Error::NonFinite { .. }
            | Error::NonFiniteState { .. }
            | Error::NonFiniteLoss { .. }
            | Error::GradCheck { .. }
            | Error::Tape(_) => 2,
            Error::Header(_) | Error::PayloadShape(_) | Error::Truncated(_) | Error::Io(_) => 3,
        }
    }
}
