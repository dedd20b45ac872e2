use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("invalid UTF-8 at byte {offset}")]
    Encoding { offset: u64 },

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("shape mismatch: expected {expected} columns, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("length mismatch: {left} gold labels vs {right} predictions")]
    LengthMismatch { left: usize, right: usize },

    #[error("solver diverged (non-finite loss) with step size {step_size}")]
    Divergence { step_size: f64 },

    #[error("missing artifact {}: run {producer} first", path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("artifact {} does not match its recorded hash", path.display())]
    HashMismatch { path: PathBuf },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Stream(_) => 3,
            Error::Parse { .. } | Error::Encoding { .. } | Error::Format { .. } | Error::Json(_) | Error::Csv(_) => 4,
            Error::MissingArtifact { .. } | Error::HashMismatch { .. } => 5,
            Error::Model(_) | Error::Shape { .. } | Error::LengthMismatch { .. } => 6,
            Error::Divergence { .. } => 7,
        }
    }
}
