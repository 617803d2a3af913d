use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interval target ({lower}, {upper}): {reason}")]
    InvalidTarget {
        lower: f64,
        upper: f64,
        reason: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("exp overflow: interval bound {0} exceeds the representable range, pre-scale the targets")]
    ExpOverflow(f64),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
