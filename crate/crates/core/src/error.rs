use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),

    #[error("no frames found in {0}")]
    NoFrames(PathBuf),

    #[error("dimension mismatch: expected {expected:?} (w, h, c), found {found:?} in {context}")]
    DimensionMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
        context: String,
    },

    #[error("unsupported bit depth in {path}: {detail}")]
    UnsupportedBitDepth { path: PathBuf, detail: String },

    #[error("empty sequence")]
    EmptySequence,

    #[error("frame {width}x{height} too small: {detail}")]
    FrameTooSmall {
        width: usize,
        height: usize,
        detail: String,
    },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for sequence of {len} frames")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("degenerate gradient: mean spatial gradient is zero")]
    DegenerateGradient,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("raw container: {0}")]
    RawFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error("external process: {0}")]
    External(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}
