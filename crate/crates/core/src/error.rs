use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("raster-too-small: {height}x{width} raster cannot hold a {size}x{size} window")]
    RasterTooSmall { height: usize, width: usize, size: usize },

    #[error("invalid-size: {0}")]
    InvalidSize(String),

    #[error("invalid-fractions: {0}")]
    InvalidFractions(String),

    #[error("invalid-raster: {0}")]
    InvalidRaster(String),

    #[error("unpaired files: {}", .0.join(", "))]
    Unpaired(Vec<String>),

    #[error("unknown-architecture: {0:?} (expected one of {names})", names = crate::zoo::Family::names().join(", "))]
    UnknownArchitecture(String),

    #[error("invalid-config: {0}")]
    InvalidConfig(String),

    #[error("invalid-spatial-size: {0} is not a positive multiple of 32")]
    InvalidSpatialSize(usize),

    #[error("shape-mismatch: {0}")]
    ShapeMismatch(String),

    #[error("config-mismatch: {0}")]
    ConfigMismatch(String),

    #[error("empty-dataset: {0}")]
    EmptyDataset(String),

    #[error("divergence: non-finite loss at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("bad-checkpoint: {field}: {reason}")]
    BadCheckpoint { field: String, reason: String },

    #[error("empty-confusion: metrics need at least one pixel")]
    EmptyConfusion,

    #[error("invalid-thresholds: {0}")]
    InvalidThresholds(String),

    #[error("empty-input: {0}")]
    EmptyInput(String),

    #[error("need-multiple-models: comparison needs at least 2 models, got {0}")]
    NeedMultipleModels(usize),

    #[error("oom: batch size {batch_size} needs ~{needed_bytes} bytes, budget is {budget_bytes}")]
    Oom {
        batch_size: usize,
        needed_bytes: u64,
        budget_bytes: u64,
    },

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

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn bad_checkpoint(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::BadCheckpoint {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
