use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not a physical density matrix: {0}")]
    NotPhysical(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("undefined width: {0}")]
    UndefinedWidth(String),

    #[error("ambiguous peak: global maximum attained at grid indices {peaks:?}")]
    AmbiguousPeak { peaks: Vec<usize> },

    #[error("curvature error: {0}")]
    Curvature(String),

    #[error("parse error at key `{key}`: {reason}")]
    Parse { key: String, reason: String },

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    LengthMismatch { expected: u64, found: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dimension(expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn parse(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
