use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0} contains no interactions")]
    EmptyInput(PathBuf),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient for user {user}, items {items:?}")]
    NonFiniteGradient { user: usize, items: Vec<usize> },

    #[error("non-finite loss for user {user} at epoch {epoch}")]
    NonFiniteLoss { user: usize, epoch: usize },

    #[error("trajectory mismatch: {0}")]
    TrajectoryMismatch(String),

    #[error(
        "teacher converged after {converged} epochs but {needed} are needed for {checkpoints} \
         distinct checkpoints with full 5-epoch consistency windows; lower E or raise max epochs"
    )]
    TooFewEpochs {
        converged: usize,
        needed: usize,
        checkpoints: usize,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
