use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read image {path}: {source}")]
    ReadImage {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    WriteImage {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("unsupported image {path}: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },
    #[error("invalid image dimensions: {0}")]
    InvalidDimensions(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singular affine transform (|det| = {det:.3e} < 1e-6)")]
    SingularTransform { det: f64 },
    #[error("alpha map selects no foreground pixels")]
    DegenerateAlpha,
    #[error("objective became non-finite at scale {scale}, iteration {iteration}")]
    NonFiniteLoss { scale: usize, iteration: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
}
