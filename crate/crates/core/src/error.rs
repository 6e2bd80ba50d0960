use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("outside the domain of {op}: {reason}")]
    Domain { op: &'static str, reason: String },

    #[error("resolution mismatch: expected {expected:?}, got {got:?}")]
    ResolutionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("tracking failed{}: {reason}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    Tracking { frame: Option<usize>, reason: String },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a frame id to a tracking failure; other errors pass through.
    pub fn at_frame(self, frame_id: usize) -> Self {
        match self {
            Error::Tracking { reason, .. } => Error::Tracking {
                frame: Some(frame_id),
                reason,
            },
            other => other,
        }
    }
}
