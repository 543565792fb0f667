use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("truncated frame: {0}")]
    Truncated(String),
    #[error("schema version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u16, found: u16 },
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("frame of {size} bytes exceeds the {max} byte limit")]
    FrameTooLarge { size: usize, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown environment '{0}'")]
    UnknownEnv(String),
    #[error("action {action} out of range for agent {agent} (action space {n_actions})")]
    ActionOutOfRange {
        agent: usize,
        action: usize,
        n_actions: usize,
    },
    #[error("step called after the episode finished")]
    EpisodeDone,

    #[error("model '{0}' not found")]
    ModelNotFound(String),
    #[error("model '{0}' is frozen")]
    ModelFrozen(String),

    #[error("unknown task {0}")]
    UnknownTask(u64),
    #[error("duplicate outcome report for task {0}")]
    DuplicateReport(u64),
    #[error("no active learner group")]
    NoActiveGroup,
    #[error("unknown learner group {0}")]
    UnknownGroup(u32),
    #[error("no learning period in progress for group {0}")]
    NoPeriod(u32),
    #[error("empty opponent candidate set")]
    EmptyCandidates,
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("no model loaded")]
    NoModel,
    #[error("shutting down")]
    Shutdown,
    #[error("shard group aborted: {0}")]
    Aborted(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("remote error ({code}): {message}")]
    Remote { code: u16, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Transport-level failures that are worth retrying against the same endpoint.
    pub fn is_transient(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Truncated(_))
    }
}
