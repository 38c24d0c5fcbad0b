use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("validation error: {0}")]
    Validation(String),

    /// A NaN or infinity reached optimizer or estimator state. Training must stop.
    #[error("poisoned state: {0}")]
    Poisoned(String),

    #[error("estimator not ready: {0}")]
    NotReady(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("config error: {0}")]
    Config(String),

    /// A mathematical precondition of an experiment does not hold.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
