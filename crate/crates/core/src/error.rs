use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid mesh, field, threshold or run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A state value became NaN or infinite during stepping.
    #[error("non-finite state at step {step} (t = {time})")]
    NonFinite { step: u64, time: f64 },

    /// Input that violates an operation's domain (window too short, bad order, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The run was cancelled through its control handle.
    #[error("run cancelled at step {step}")]
    Cancelled { step: u64 },

    /// Writing output failed.
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
