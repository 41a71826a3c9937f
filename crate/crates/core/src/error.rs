use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhibpError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("truncation level {eps:e} leaves {bound:e} expected counts below it (limit {limit:e})")]
    Truncation { eps: f64, bound: f64, limit: f64 },

    #[error("non-finite log density at iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },

    #[error("catalogue mismatch: {0}")]
    Catalogue(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PhibpError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> PhibpError {
    PhibpError::InvalidParameter { name, reason: reason.into() }
}
