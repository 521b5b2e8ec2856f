use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed feature file: {0}")]
    Format(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("subsample size {tau} exceeds available rows {available}")]
    SubsampleTooLarge { tau: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("histograms do not share bin edges")]
    HistogramMismatch,

    #[error("histogram has no mass")]
    EmptyHistogram,

    #[error("insufficient rows: {0}")]
    InsufficientRows(String),

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("constant series has no correlation")]
    ConstantSeries,

    #[error("missing cells: {}", .0.join("; "))]
    MissingCells(Vec<String>),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
