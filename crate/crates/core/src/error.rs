use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A record could not be decoded. `line` is 1-based.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    /// The backend could not be reached or timed out. Retrying may succeed.
    #[error("transport error: {0}")]
    Transport(String),

    /// The backend answered with something that does not follow the wire protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("cache file corrupt at byte offset {offset}: {message}")]
    CacheCorrupt { offset: u64, message: String },

    #[error("cache version mismatch: expected {expected}, found {found}")]
    CacheVersion { expected: u32, found: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Prefixes a human-readable context onto the message, keeping the variant.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Validation(m) => Error::Validation(format!("{ctx}: {m}")),
            Error::Transport(m) => Error::Transport(format!("{ctx}: {m}")),
            Error::Protocol(m) => Error::Protocol(format!("{ctx}: {m}")),
            Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("{ctx}: {m}")),
            Error::Degenerate(m) => Error::Degenerate(format!("{ctx}: {m}")),
            other => other,
        }
    }
}
