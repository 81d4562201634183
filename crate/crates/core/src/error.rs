use std::path::PathBuf;

use pano_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("crop error: {0}")]
    Crop(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("math error: {0}")]
    Math(String),
    #[error("calibration error at row {row}: {message}")]
    Calibration { row: usize, message: String },
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: u64, what: String },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad user input (configuration, data or
    /// arguments) rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::Data(_)
            | Error::Validation(_)
            | Error::Dimension(_)
            | Error::Shape(_)
            | Error::Crop(_)
            | Error::Format(_) => true,
            Error::Autodiff(e) => !matches!(e, AutodiffError::State(_)),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
