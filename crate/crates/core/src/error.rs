use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("extent error: {0}")]
    Extent(String),

    #[error("kernel error: {0}")]
    Kernel(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("boundary error: {0}")]
    Boundary(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("singular signal rate: alpha = {0:e}")]
    Singularity(f64),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ensemble member with seed {seed} failed: {reason}")]
    PartialEnsemble { seed: u64, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::Singularity(_) | Error::PartialEnsemble { .. }
        )
    }
}
