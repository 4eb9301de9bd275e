use std::path::PathBuf;

/// Errors raised anywhere in the search pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("evaluation budget exhausted after {0} evaluations")]
    BudgetExhausted(usize),

    #[error("oracle failed on genome {genome}: {message}")]
    Oracle { genome: String, message: String },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied configuration rather than runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse { .. })
    }
}
