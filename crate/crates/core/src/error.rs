use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A direction of zero length was used where a nonzero one is required,
    /// usually a collapsed weight vector.
    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    /// A NaN or infinity reached the optimizer state.
    #[error("poisoned state: {0}")]
    PoisonedState(String),

    #[error("invalid config `{field}`: {message}")]
    Config { field: String, message: String },

    /// A simulation run hit a poisoned state and stopped.
    #[error("run aborted at step {step}, layer {layer}: {reason}")]
    Aborted {
        step: usize,
        layer: usize,
        reason: String,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
