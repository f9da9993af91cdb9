use std::path::PathBuf;

use thiserror::Error;

use crate::types::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}:{line}: label {value:?} is not 0 or 1")]
    LabelOutOfDomain {
        path: PathBuf,
        line: u64,
        value: String,
    },

    #[error("{path}:{line}: group value {value:?} for category {category:?} is not 0 or 1 (pre-encode demographic attributes as 0/1)")]
    NonBinaryGroup {
        path: PathBuf,
        line: u64,
        category: String,
        value: String,
    },

    #[error("{path}:{line}: duplicate annotator id {id:?}")]
    DuplicateAnnotator { path: PathBuf, line: u64, id: String },

    #[error("feature dimension mismatch: expected {expected}, found {found} ({context})")]
    Dimension {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("dataset failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("gold labels do not cover instance {0:?}")]
    Coverage(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by malformed input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::LabelOutOfDomain { .. }
            | Error::NonBinaryGroup { .. }
            | Error::DuplicateAnnotator { .. }
            | Error::Dimension { .. }
            | Error::Validation(_)
            | Error::Coverage(_)
            | Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
