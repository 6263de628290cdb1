use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (z = {z_cam})")]
    BehindCamera { z_cam: f64 },

    #[error("sample location out of bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("could not place {requested} objects after {attempts} attempts")]
    PlacementFailed { requested: usize, attempts: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no forward trace was recorded; run the forward pass in recording mode")]
    Graph,

    #[error("value outside the function domain: {0}")]
    Domain(String),

    #[error("ray does not intersect the sampling volume")]
    NoIntersection,

    #[error("validity mask selects no pixels")]
    EmptyMask,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed data in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
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
