use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid {what}: {msg}")]
    Validation { what: String, msg: String },

    #[error("no pose for frame {frame} in trajectory")]
    TrajectoryGap { frame: u32 },

    #[error("degenerate point configuration: {0}")]
    Degenerate(String),

    #[error("frame {frame} out of range (sequence has {frames} frames)")]
    FrameOutOfRange { frame: u32, frames: u32 },

    #[error("plugin failed: {0}")]
    Plugin(String),

    #[error("{0}")]
    Config(String),

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            what: what.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
