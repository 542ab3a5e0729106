//! Keeps provenance sketches for recurring queries current and uses them to
//! answer those queries over only the relevant part of each table.
//!
//! A [`SketchManager`] sits on top of a [`sketchd_store::Store`]. Updates go
//! through [`SketchManager::on_update`]; queries go through
//! [`SketchManager::answer_query`], which captures a sketch on first use and
//! maintains it incrementally afterwards.

mod entry;
mod error;
pub mod instrument;
mod manager;
pub mod template;

pub use entry::{EntryId, SketchEntry, ENTRY_FORMAT, ENTRY_FORMAT_VERSION, HISTORY_LEN};
pub use error::{ManagerError, Result};
pub use instrument::{eval_instrumented, instrument_query, sketch_scan};
pub use manager::{
    Answer, Maintenance, ManagerConfig, ManagerStats, Reuse, SketchManager, Strategy, DEFAULT_BATCH_SIZE,
};
pub use template::QueryTemplate;
