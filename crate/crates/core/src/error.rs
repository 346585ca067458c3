use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FedError>;

#[derive(Debug, Error)]
pub enum FedError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid value for `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parameter key mismatch: {0}")]
    KeyMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest field `{field}`: {message}")]
    Manifest { field: String, message: String },

    #[error("numerical divergence at round {round}{}: {message}", client.map(|c| format!(", client {c}")).unwrap_or_default())]
    Divergence {
        round: usize,
        client: Option<usize>,
        message: String,
    },

    #[error("round {round}, client {client}: {source}")]
    InClient {
        round: usize,
        client: usize,
        #[source]
        source: Box<FedError>,
    },
}

impl FedError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        FedError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FedError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn manifest(field: impl Into<String>, message: impl Into<String>) -> Self {
        FedError::Manifest {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True when this error (or the error it wraps) is a divergence report.
    pub fn is_divergence(&self) -> bool {
        match self {
            FedError::Divergence { .. } => true,
            FedError::InClient { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}
