use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    /// A bounded buffer can no longer answer exactly; rebuild with `init_state`.
    #[error("recapture required: {0}")]
    RecaptureRequired(String),
    #[error("inconsistent delta: {0}")]
    InconsistentDelta(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt engine state: {0}")]
    CorruptState(String),
    #[error(transparent)]
    Core(#[from] sketchd_core::Error),
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;
