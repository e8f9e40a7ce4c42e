use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("annotations: {0}")]
    Annotations(String),

    #[error("annotations, frame {frame}: {message}")]
    AnnotationsFrame { frame: usize, message: String },

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: u32,
        expected_h: u32,
        got_w: u32,
        got_h: u32,
    },

    #[error("unknown vector has length {got}, layout expects {expected}")]
    LayoutMismatch { expected: usize, got: usize },

    #[error("image too small for {levels} pyramid levels: {width}x{height}")]
    ImageTooSmall { width: u32, height: u32, levels: usize },

    #[error("video has no frames")]
    EmptyVideo,

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

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Annotations(_) | Error::AnnotationsFrame { .. } => "annotations",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::LayoutMismatch { .. } => "layout-mismatch",
            Error::ImageTooSmall { .. } => "image-too-small",
            Error::EmptyVideo => "empty-video",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json { .. } => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
