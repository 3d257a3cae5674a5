use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: failed to decode image: {message}")]
    Image { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid camera: {0}")]
    Camera(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("point set: {0}")]
    Points(String),

    #[error("{count} non-finite {}", if *.count == 1 { "pixel" } else { "pixels" })]
    NonFinite { count: usize },

    #[error("singular system: no data constraints")]
    SingularSystem,

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("splat cache does not match the supplied points")]
    CacheMismatch,

    #[error("loss is not finite at iteration {iteration} ({group})")]
    NonFiniteLoss { iteration: usize, group: String },

    #[error("configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool: 2 for configuration and
    /// input problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SingularSystem
            | Error::NotConverged { .. }
            | Error::NonFiniteLoss { .. }
            | Error::NonFinite { .. }
            | Error::CacheMismatch => 3,
            _ => 2,
        }
    }
}
