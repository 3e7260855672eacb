use thiserror::Error;

/// Errors raised anywhere in the attack pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("connection error: {0}")]
    Connection(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl AttackError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        AttackError::Argument(msg.into())
    }
}

impl From<std::io::Error> for AttackError {
    fn from(e: std::io::Error) -> Self {
        AttackError::Io(e.to_string())
    }
}

pub type Result<T, E = AttackError> = std::result::Result<T, E>;
