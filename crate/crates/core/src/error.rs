use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or input violates a documented invariant.
    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("training diverged at epoch {epoch}: non-finite {component}")]
    Divergence { component: String, epoch: usize },

    #[error("contradictory artifacts overlap: {first} and {second} share {pixels} pixel(s)")]
    ArtifactConflict {
        first: String,
        second: String,
        pixels: usize,
    },

    #[error("identifier sets differ; missing from predictions: {missing_pred:?}; missing from references: {missing_ref:?}")]
    IdMismatch {
        missing_pred: Vec<String>,
        missing_ref: Vec<String>,
    },

    #[error("tile set does not match plan: {0}")]
    TileMismatch(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("I/O error at {path}: {source}")]
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

    #[error("JSON error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad configuration or inputs rather than a failing run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. }
                | Error::Shape { .. }
                | Error::ArtifactConflict { .. }
                | Error::IdMismatch { .. }
                | Error::TileMismatch(_)
        )
    }

    /// Short machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Invalid { .. } => "invalid",
            Error::Shape { .. } => "shape",
            Error::Divergence { .. } => "divergence",
            Error::ArtifactConflict { .. } => "artifact_conflict",
            Error::IdMismatch { .. } => "id_mismatch",
            Error::TileMismatch(_) => "tile_mismatch",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json { .. } => "json",
        }
    }
}
