use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HdrmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HdrmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl HdrmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HdrmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(HdrmError::Dimension { expected, got })
        }
    }
}
