use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{line}: {msg}")]
    Parse { file: PathBuf, line: usize, msg: String },

    #[error("{file}:{line}: node id {id} out of range for {n} nodes")]
    NodeRange {
        file: PathBuf,
        line: usize,
        id: usize,
        n: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("unsupported report: {0}")]
    UnsupportedReport(String),

    #[error("non-finite loss at epoch {epoch} (last finite epoch: {last_finite:?})")]
    Divergence {
        epoch: usize,
        last_finite: Option<usize>,
        /// Parameters and memory after the last finite epoch.
        checkpoint: Option<Box<gthna_autodiff::Checkpoint>>,
    },

    #[error("cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Tensor(#[from] gthna_autodiff::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad input data rather than configuration or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::NodeRange { .. } | Error::Shape(_) | Error::Io { .. } | Error::UndefinedMetric(_)
        )
    }
}
