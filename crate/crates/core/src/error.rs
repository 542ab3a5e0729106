use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("arithmetic overflow: {0}")]
    Overflow(String),
    #[error("ill-formed delta: {0}")]
    IllFormedDelta(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("value {value} of {relation}.{attribute} is outside the partitioned domain")]
    OutOfDomain {
        relation: String,
        attribute: String,
        value: String,
    },
    #[error("kind mismatch: partition on {expected} got {got}")]
    KindMismatch { expected: String, got: String },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("inconsistent sketch delta: {0}")]
    InconsistentDelta(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
