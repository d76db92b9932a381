use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pixel ({x}, {y}) has color {rgb:?} which matches no palette entry")]
    UnknownColor { x: u32, y: u32, rgb: [u8; 3] },

    #[error("image is {width}x{height}, at least {min}x{min} is required")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("not enough points for a plane hypothesis: {0}")]
    InsufficientPoints(String),

    #[error("need more than {k} points for a {k}-NN graph, got {n}")]
    TooFewPoints { n: usize, k: usize },

    #[error("cannot split {items} items into {folds} folds")]
    TooFewItems { items: usize, folds: usize },

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("all paired differences are zero")]
    DegenerateDifferences,

    #[error("facade spec cannot be realised: {0}")]
    SpecInfeasible(String),

    #[error("missing or unpaired item: {0}")]
    MissingPair(String),

    #[error("model was trained with feature recipe {model:016x}, extractor has {extractor:016x}")]
    FingerprintMismatch { model: u64, extractor: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

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
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { what, msg: msg.into() }
    }
}
