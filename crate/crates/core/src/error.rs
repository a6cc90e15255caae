use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value or operation parameter violates its invariant.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Input data is malformed: non-finite values, mismatched dimensions, bad tensors.
    #[error("data error: {0}")]
    Data(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("degenerate features: {0}")]
    DegenerateFeature(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("backend `{backend}` failed{}: {reason}", stage.map(|s| format!(" at stage {s}")).unwrap_or_default())]
    Backend {
        backend: String,
        stage: Option<usize>,
        reason: String,
    },

    /// A model graph or manifest does not expose the tensors the backend contract requires.
    #[error("contract violation in {context}: expected {expected}, found {found}")]
    Contract {
        context: String,
        expected: String,
        found: String,
    },

    #[error("dataset index: {0}")]
    Index(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a cascade stage index to a backend error; other errors pass through.
    pub fn at_stage(self, stage: usize) -> Self {
        match self {
            Error::Backend {
                backend, reason, ..
            } => Error::Backend {
                backend,
                stage: Some(stage),
                reason,
            },
            other => other,
        }
    }

    /// True for errors that indicate a misconfigured run rather than a bad input image.
    pub fn is_contract_or_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Contract { .. })
    }
}
