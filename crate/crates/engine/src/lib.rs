//! Incremental maintenance of provenance sketches.
//!
//! [`init_state`] evaluates a plan with a merge root over the current tables
//! and records per-operator state. [`EngineState::process_delta`] then turns
//! annotated deltas into sketch deltas without re-reading unchanged data.

mod aggregate;
pub mod bloom;
pub mod config;
mod error;
mod join;
mod merge;
mod node;
mod persist;
pub mod pushdown;
mod state;
mod topk;

pub use bloom::BloomFilter;
pub use config::{BufferConfig, TopKBuffer};
pub use error::{EngineError, Result};
pub use merge::MergeState;
pub use persist::{FORMAT, FORMAT_VERSION};
pub use pushdown::{plan_pushdown, PushdownPlan};
pub use state::{init_state, EngineState, EngineStats, NodeTrace, Trace};
