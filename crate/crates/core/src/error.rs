use thiserror::Error;

use crate::tensor::Shape;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch on {axis} axis (expected {expected}, got {actual})")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("loss must be a scalar, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("weight file: {0}")]
    WeightFormat(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFinite { step: usize, loss: f64 },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn image(path: impl AsRef<std::path::Path>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
