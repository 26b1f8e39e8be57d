//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image size mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    SizeMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("pixel ({x}, {y}) outside {w}x{h} image")]
    OutOfBounds { x: f64, y: f64, w: usize, h: usize },

    #[error("malformed {format} file {path:?} at byte {offset}: {reason}")]
    Malformed {
        format: &'static str,
        path: String,
        offset: u64,
        reason: String,
    },

    #[error("scene config error at {path}: {reason}")]
    Config { path: String, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
