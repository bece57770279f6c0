use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid hyperparameter or configuration value.
    #[error("configuration error: {0}")]
    Config(String),
    /// Step index outside `1..=N`.
    #[error("step index {index} out of range 1..={max}")]
    Index { index: usize, max: usize },
    /// Vector length does not match what the model or world expects.
    #[error("shape error: expected {expected}, got {got} ({what})")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// Malformed condition (empty, too long, or event id out of vocabulary).
    #[error("invalid condition: {0}")]
    InvalidCondition(String),
    /// Cosine score requested for a zero-norm embedding.
    #[error("scoring error: zero-norm {0} embedding")]
    Scoring(&'static str),
    /// Operation called outside its precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// Pressure level of an all-zero signal.
    #[error("pressure level undefined for a zero signal")]
    UndefinedLevel,
    /// Bad argument (empty list, zero sample count, ...).
    #[error("argument error: {0}")]
    Argument(String),
    /// Non-finite loss or parameters.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Checkpoint bytes do not parse.
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    /// Checkpoint written by an incompatible format version.
    #[error("checkpoint format version {found} not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether this error stems from user-supplied configuration rather than
    /// a failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Argument(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
