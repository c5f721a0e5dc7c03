use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category, used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing class directories under {root}: {missing:?}")]
    MissingClasses { root: PathBuf, missing: Vec<String> },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown backbone `{name}`; available: {available:?}")]
    UnknownBackbone {
        name: String,
        available: Vec<&'static str>,
    },

    #[error("failed to load weights from {path}: {reason} (place converted weights at this path or set `model.weights_dir`)")]
    Weights { path: PathBuf, reason: String },

    #[error("non-finite loss at step {step} (epoch {epoch}, lr {lr}): {diagnostic}")]
    NonFiniteLoss {
        step: usize,
        epoch: usize,
        lr: f64,
        diagnostic: String,
    },

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::UnknownBackbone { .. } => ErrorKind::Config,
            Error::NonFiniteLoss { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
