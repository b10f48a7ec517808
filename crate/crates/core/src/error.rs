use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class ratios sum to {0}, expected 1")]
    RatioSum(f64),

    #[error("invalid temperature {0}: must be positive and finite")]
    Temperature(f64),

    #[error("temperature mismatch: distillation computed at T={computed}, combined at T={combined}")]
    TemperatureMismatch { computed: f64, combined: f64 },

    #[error("batch is not aligned; evaluation requires every slot to hold the same specimen")]
    UnalignedBatch,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("train/validation overlap: {0} specimens appear in both")]
    FoldOverlap(usize),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("target directory {0} is not empty (use force to overwrite)")]
    NotEmpty(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("toml: {0}")]
    Toml(String),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Stable machine-readable kind, used by the CLI's error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::RatioSum(_) => "ratio_sum",
            Error::Temperature(_) => "temperature",
            Error::TemperatureMismatch { .. } => "temperature_mismatch",
            Error::UnalignedBatch => "unaligned_batch",
            Error::Config(_) => "config",
            Error::FoldOverlap(_) => "fold_overlap",
            Error::Checkpoint(_) => "checkpoint",
            Error::NotEmpty(_) => "not_empty",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
            Error::Csv(_) => "csv",
            Error::Toml(_) => "toml",
        }
    }
}
