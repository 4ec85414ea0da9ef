use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error on {axis} axis: extent {extent} + 2*{padding} padding is smaller than kernel {kernel}")]
    Shape {
        axis: &'static str,
        extent: usize,
        kernel: usize,
        padding: usize,
    },

    #[error("invalid stride 0 on {axis} axis")]
    ZeroStride { axis: &'static str },

    #[error("channel mismatch: expected {expected} input channels, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch in {context}: expected {expected:?}, got {actual:?}")]
    DimMismatch {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid configuration at {stage}: {reason}")]
    InvalidConfig { stage: String, reason: String },

    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error("class {class} has {available} labeled pixels, {requested} requested for training")]
    ClassTooSmall {
        class: String,
        available: usize,
        requested: usize,
    },

    #[error("training set is empty")]
    EmptyTrainSet,

    #[error("pixel ({row}, {col}) is unlabeled")]
    UnlabeledPixel { row: usize, col: usize },

    #[error("pixel ({row}, {col}) outside {height}x{width} image")]
    OutOfImage {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("split inconsistent with labels: {0}")]
    InconsistentSplit(String),

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("kappa undefined: chance agreement is 1")]
    DegenerateKappa,

    #[error("backward called without an activation cache")]
    MissingCache,

    #[error("{path}: payload holds {actual} scalars, header declares {expected}")]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("{path}: non-finite value at index {index}")]
    NonFinite { path: PathBuf, index: usize },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Stable machine-readable code used on the CLI diagnostic stream.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } | Error::ZeroStride { .. } => "E_SHAPE",
            Error::ChannelMismatch { .. } | Error::DimMismatch { .. } => "E_DIM",
            Error::InvalidConfig { .. } => "E_CONFIG",
            Error::TargetOutOfRange { .. } => "E_TARGET",
            Error::ClassTooSmall { .. } => "E_CLASS_TOO_SMALL",
            Error::EmptyTrainSet => "E_EMPTY_TRAIN",
            Error::UnlabeledPixel { .. } => "E_UNLABELED",
            Error::OutOfImage { .. } => "E_OUT_OF_IMAGE",
            Error::InconsistentSplit(_) => "E_SPLIT",
            Error::EmptyMatrix => "E_EMPTY_MATRIX",
            Error::DegenerateKappa => "E_KAPPA",
            Error::MissingCache => "E_CACHE",
            Error::SizeMismatch { .. } => "E_SIZE",
            Error::NonFinite { .. } => "E_NONFINITE",
            Error::Format { .. } => "E_FORMAT",
            Error::Io { .. } => "E_IO",
            Error::Json { .. } => "E_JSON",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
