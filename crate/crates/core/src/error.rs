use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GaitError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GaitError {
    #[error("dataset root {0} does not exist")]
    MissingRoot(PathBuf),

    #[error("silhouette has no foreground pixels")]
    EmptySilhouette,

    #[error("fewer than three troughs in the lower-limb signal (found {found})")]
    IncompleteCycle { found: usize },

    #[error("contour is degenerate: {0}")]
    DegenerateContour(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown identity {0}")]
    UnknownIdentity(u32),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl GaitError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        GaitError::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        GaitError::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GaitError::InvalidArgument(msg.into())
    }
}
