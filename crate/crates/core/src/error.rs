use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: file not found", path.display())]
    MissingFile { path: PathBuf },

    #[error("{}: malformed WAV header: {reason}", path.display())]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("{}: unsupported encoding: {reason}", path.display())]
    UnsupportedEncoding { path: PathBuf, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: line {line}: {reason}", path.display())]
    Manifest { path: PathBuf, line: usize, reason: String },

    #[error("speaker {speaker:?} has conflicting labels")]
    ConflictingLabel { speaker: String },

    #[error("{}: cache format error: {reason}", path.display())]
    CacheFormat { path: PathBuf, reason: String },

    #[error("{}: truncated file: {reason}", path.display())]
    Truncated { path: PathBuf, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{}: checkpoint format error: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("input too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("sample rate mismatch: expected {expected} Hz, got {got} Hz")]
    RateMismatch { expected: u32, got: u32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("fold plan error: {0}")]
    FoldPlan(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
