use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the inspection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: file not found")]
    MissingFile { path: PathBuf },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u32),

    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    TruncatedPixels { expected: usize, found: usize },

    #[error("unexpected image kind: {0}")]
    UnexpectedImageKind(&'static str),

    #[error("invalid dimensions {height}x{width}")]
    InvalidDimensions { height: usize, width: usize },

    #[error("degenerate stretch: image has constant intensity")]
    DegenerateStretch,

    #[error("nonpositive mean intensity {0}")]
    NonpositiveMean(f64),

    #[error("window {window} larger than image {height}x{width}")]
    WindowTooLarge {
        window: usize,
        height: usize,
        width: usize,
    },

    #[error("insufficient blocks: {blocks} blocks cannot drop {trim} from each end")]
    InsufficientBlocks { blocks: usize, trim: usize },

    #[error("fabric type {0} has no defect-free samples")]
    NoDefectFreeSamples(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dataset contains a single label; both defect_free and defective are required")]
    SingleLabel,

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("manifest: {0}")]
    Manifest(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
