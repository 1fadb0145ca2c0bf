use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum CodaError {
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Audio input is not a supported PCM/float WAV.
    #[error("unsupported audio format: {0}")]
    Format(String),

    /// A linear-algebra or optimisation step failed.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Model document is malformed or does not cover the request.
    #[error("model error: {0}")]
    Model(String),

    /// Run configuration is malformed or has unknown keys.
    #[error("config error: {0}")]
    Config(String),

    /// Scene script failed validation.
    #[error("scene script error: {0}")]
    Script(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<CodaError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CodaError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        CodaError::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CodaError::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap the error with a human readable location (e.g. buffer index).
    pub fn context(self, context: impl Into<String>) -> Self {
        CodaError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &CodaError {
        match self {
            CodaError::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, CodaError>;
