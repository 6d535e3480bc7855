use std::path::PathBuf;

use crate::series::YearMonth;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the forecasting library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("row {row}: {message}")]
    Format { row: usize, message: String },

    #[error("missing month {missing} (series is not contiguous)")]
    Continuity { missing: YearMonth },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("level {levels} needs an equivalent filter of width {width}, series has {len} points")]
    Level {
        levels: usize,
        width: usize,
        len: usize,
    },

    #[error("unknown wavelet filter `{0}`")]
    UnknownFilter(String),

    #[error("training diverged in restart {restart} at epoch {epoch}")]
    TrainingDivergence { restart: usize, epoch: usize },

    #[error("lag-order selection failed: {0}")]
    Selection(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("{0} is undefined for this input")]
    MetricUndefined(&'static str),

    #[error("window error: {0}")]
    Window(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("invalid model file: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
