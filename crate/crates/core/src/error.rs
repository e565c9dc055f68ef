use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("image too small: {0}")]
    ImageTooSmall(String),
    #[error("input has no texture (zero intensity variance)")]
    NoTexture,
    #[error("alignment diverged: |t| = {0:.2} px exceeds search bound {1:.2} px")]
    Diverged(f64, f64),
    #[error("sample class is empty: {0}")]
    EmptyClass(&'static str),
    #[error("non-finite feature value in sample {0}")]
    NonFinite(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("box {0:?} lies outside the {1}x{2} image")]
    OutOfBounds((i64, i64, i64, i64), usize, usize),
    #[error("need at least 2 pairs for regression, got {0}")]
    TooFewPairs(usize),
    #[error("bad file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Errors caused by bad user input rather than a failure mid-run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::MissingFile(_)
                | Error::Validation(_)
                | Error::Format { .. }
                | Error::OutOfBounds(..)
                | Error::DimensionMismatch(..)
                | Error::EmptyClass(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
