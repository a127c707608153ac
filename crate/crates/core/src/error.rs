use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("malformed url `{url}`: {reason}")]
    MalformedUrl { url: String, reason: String },
    #[error("unknown image `{0}`")]
    UnknownImage(String),
    #[error("workspace locked by another process ({0})")]
    Locked(PathBuf),
    #[error("invalid fetch policy: {0}")]
    InvalidPolicy(String),
    #[error("engine `{engine}` failed: {detail}")]
    Engine { engine: String, detail: String },
    #[error("image: {0}")]
    Image(String),
    #[error("detector `{detector}` failed: {detail}")]
    Detector { detector: String, detail: String },
    #[error("not ready: {0}")]
    NotReady(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid noise matrix: {0}")]
    InvalidMatrix(String),
    #[error("true class `{0}` has no pairs; smoothing must be positive")]
    EmptyClass(crate::taxonomy::ExpressionLabel),
    #[error("inconsistent noise model: noisy label `{0}` has zero likelihood")]
    InconsistentNoiseModel(crate::taxonomy::ExpressionLabel),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged {
        iteration: usize,
        loss: f64,
        checkpoint: Box<crate::trainer::Checkpoint>,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("reports were computed on different test sets")]
    TestSetMismatch,
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}
