use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("payload size mismatch: sidecar declares {expected} bytes, file holds {actual}")]
    PayloadSizeMismatch { expected: usize, actual: usize },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("malformed sidecar or manifest: {0}")]
    Format(String),

    #[error("unsupported NIfTI variant: {0}")]
    UnsupportedNifti(String),

    #[error("degenerate intensity range: percentile {lo} equals percentile {hi}")]
    DegenerateIntensity { lo: f32, hi: f32 },

    #[error("unknown region '{0}'")]
    UnknownRegion(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("shape not divisible: {0}")]
    ShapeNotDivisible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("both classes required: {0}")]
    SingleClass(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("index {index} out of range for axis {axis} of extent {extent}")]
    IndexOutOfRange {
        axis: usize,
        index: usize,
        extent: usize,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::UnsupportedNifti(_)
                | Error::UnknownRegion(_)
                | Error::Shape(_)
                | Error::ShapeNotDivisible(_)
                | Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::Empty(_)
                | Error::SingleClass(_)
                | Error::IndexOutOfRange { .. }
                | Error::PayloadSizeMismatch { .. }
                | Error::NonFinite(_)
                | Error::Json(_)
        )
    }
}
