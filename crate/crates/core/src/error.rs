use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor of shape {rows}x{cols} needs {expected} values, got {got}")]
    Length {
        rows: usize,
        cols: usize,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate normalization range: min == max == {0}")]
    DegenerateRange(f64),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unexpected CSV header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Divergence {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
