use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PorError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PorError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset has no actions ({0})")]
    ActionFree(String),

    #[error("goal unreachable through dataset transitions; disconnected states: {disconnected:?}")]
    GoalUnreachable { disconnected: Vec<(i32, i32)> },

    #[error("corrupt file at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PorError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PorError::Io {
            path: path.into(),
            source,
        }
    }
}
