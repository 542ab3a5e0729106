use sketchd_engine::EngineError;
use sketchd_store::StoreError;

#[derive(Debug, thiserror::Error)]
pub enum ManagerError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Core(#[from] sketchd_core::Error),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    /// The sketch selects no fragment, so the query result is empty.
    #[error("the sketch is empty")]
    EmptySketch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no sketch entry {0}")]
    UnknownEntry(u64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ManagerError> = std::result::Result<T, E>;
