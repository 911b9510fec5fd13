use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value encountered at inner iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("sensing matrix rank deficient after {attempts} generation attempts")]
    RankDeficient { attempts: usize },

    #[error("oracle solver did not reach tolerance within {0} iterations")]
    IterationCap(usize),

    #[error("direction in null space")]
    NullSpaceDirection,

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error stems from numerics rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::RankDeficient { .. }
                | Error::IterationCap(_)
                | Error::NullSpaceDirection
        )
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
