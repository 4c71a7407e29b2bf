use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed input: bad header, unknown token, unparsable cell.
    #[error("format error: {0}")]
    Format(String),

    /// Input that parses but violates a data invariant.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A precondition of an operation does not hold.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Numerically degenerate input (zero variance, too few samples to split).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An anomaly injection collides with an already labeled interval.
    #[error("injection rejected on trace {trace_id}: {reason}")]
    Rejected { trace_id: String, reason: String },

    /// An explainer found nothing that separates the anomaly from its reference.
    #[error("empty explanation: {0}")]
    EmptyExplanation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
