use thiserror::Error;

#[derive(Debug, Error)]
pub enum MacError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("operation requires a non-empty mask")]
    EmptyMask,
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),
    #[error("conditioning event has zero probability")]
    ZeroEvidence,
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MacError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MacError::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad user input rather than a failure at run time.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            MacError::InvalidArgument(_) | MacError::Validation(_) | MacError::Parse { .. } | MacError::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, MacError>;
