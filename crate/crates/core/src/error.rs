use std::io;

use thiserror::Error;

use crate::instances::Task;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size for {task}: {reason}")]
    InvalidSize { task: Task, reason: String },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("infeasible action {action} at step {step}")]
    InfeasibleAction { action: usize, step: usize },

    #[error("state is terminal")]
    TerminalState,

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("task mismatch: expected {expected}, found {found}")]
    TaskMismatch { expected: Task, found: Task },

    #[error("instance too large for exhaustive enumeration: {0}")]
    TooLarge(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
