//! Registered sketches and their text snapshots.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sketchd_core::{PartitionCatalog, QueryPlan, Sketch};
use sketchd_engine::{EngineError, EngineState};
use sketchd_store::VersionId;

use crate::error::{ManagerError, Result};
use crate::template::QueryTemplate;

pub type EntryId = u64;

/// Past (version, sketch) pairs kept per entry.
pub const HISTORY_LEN: usize = 32;

pub const ENTRY_FORMAT: &str = "sketchd-entry";
pub const ENTRY_FORMAT_VERSION: u32 = 1;

/// Where an entry's engine state lives.
#[derive(Debug)]
pub(crate) enum Slot {
    Live(Box<EngineState>),
    /// Evicted to a file under the state directory.
    Disk(PathBuf),
    /// Evicted without a state directory.
    Text(String),
}

/// A sketch together with the state that maintains it.
#[derive(Debug)]
pub struct SketchEntry {
    pub(crate) id: EntryId,
    pub(crate) template: QueryTemplate,
    pub(crate) plan: QueryPlan,
    pub(crate) catalog: Arc<PartitionCatalog>,
    pub(crate) sketch: Sketch,
    pub(crate) version: VersionId,
    pub(crate) history: Vec<(VersionId, Sketch)>,
    pub(crate) slot: Slot,
    pub(crate) last_used: u64,
}

#[derive(Serialize, Deserialize)]
struct EntrySnapshot {
    format: String,
    format_version: u32,
    id: EntryId,
    sketch: Sketch,
    version: VersionId,
    history: Vec<(VersionId, Sketch)>,
    engine: String,
}

fn corrupt(e: impl ToString) -> ManagerError {
    ManagerError::CorruptSnapshot(e.to_string())
}

impl SketchEntry {
    pub(crate) fn new(id: EntryId, state: EngineState, sketch: Sketch, version: VersionId) -> SketchEntry {
        SketchEntry {
            id,
            template: QueryTemplate::of(state.plan()),
            plan: state.plan().clone(),
            catalog: state.catalog().clone(),
            history: vec![(version, sketch.clone())],
            sketch,
            version,
            slot: Slot::Live(Box::new(state)),
            last_used: 0,
        }
    }

    pub fn id(&self) -> EntryId {
        self.id
    }

    pub fn template(&self) -> &QueryTemplate {
        &self.template
    }

    pub fn plan(&self) -> &QueryPlan {
        &self.plan
    }

    pub fn catalog(&self) -> &Arc<PartitionCatalog> {
        &self.catalog
    }

    pub fn sketch(&self) -> &Sketch {
        &self.sketch
    }

    /// The store version the sketch was last maintained at.
    pub fn version(&self) -> VersionId {
        self.version
    }

    /// Earlier sketches, oldest first, ending with the current one.
    pub fn history(&self) -> &[(VersionId, Sketch)] {
        &self.history
    }

    pub fn is_live(&self) -> bool {
        matches!(self.slot, Slot::Live(_))
    }

    pub(crate) fn advance(&mut self, sketch: Sketch, version: VersionId) {
        self.sketch = sketch.clone();
        self.version = version;
        self.history.push((version, sketch));
        if self.history.len() > HISTORY_LEN {
            let extra = self.history.len() - HISTORY_LEN;
            self.history.drain(..extra);
        }
    }

    fn engine_text(&self) -> Result<String> {
        Ok(match &self.slot {
            Slot::Live(s) => s.persist()?,
            Slot::Disk(path) => std::fs::read_to_string(path)?,
            Slot::Text(t) => t.clone(),
        })
    }

    /// Loads an evicted engine state back into memory.
    pub(crate) fn state_mut(&mut self) -> Result<&mut EngineState> {
        if !self.is_live() {
            let text = self.engine_text()?;
            let state = EngineState::restore(&text).map_err(corrupt)?;
            if let Slot::Disk(path) = &self.slot {
                let _ = std::fs::remove_file(path);
            }
            self.slot = Slot::Live(Box::new(state));
        }
        match &mut self.slot {
            Slot::Live(s) => Ok(s),
            _ => unreachable!("loaded above"),
        }
    }

    /// Moves the engine state out of memory, to `dir` if given.
    pub(crate) fn evict(&mut self, dir: Option<&std::path::Path>) -> Result<()> {
        let Slot::Live(state) = &self.slot else { return Ok(()) };
        let text = state.persist()?;
        self.slot = match dir {
            Some(dir) => {
                let path = dir.join(format!("entry-{}.json", self.id));
                std::fs::write(&path, text)?;
                Slot::Disk(path)
            }
            None => Slot::Text(text),
        };
        Ok(())
    }

    /// Serializes the sketch, its version history and the engine state.
    pub fn persist(&self) -> Result<String> {
        let snap = EntrySnapshot {
            format: ENTRY_FORMAT.into(),
            format_version: ENTRY_FORMAT_VERSION,
            id: self.id,
            sketch: self.sketch.clone(),
            version: self.version,
            history: self.history.clone(),
            engine: self.engine_text()?,
        };
        serde_json::to_string_pretty(&snap).map_err(corrupt)
    }

    pub fn restore(text: &str) -> Result<SketchEntry> {
        let snap: EntrySnapshot = serde_json::from_str(text).map_err(corrupt)?;
        if snap.format != ENTRY_FORMAT || snap.format_version != ENTRY_FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format {} {}", snap.format, snap.format_version)));
        }
        let state = EngineState::restore(&snap.engine).map_err(|e| match e {
            EngineError::CorruptState(m) => corrupt(m),
            other => corrupt(other),
        })?;
        if state.sketch() != &snap.sketch {
            return Err(corrupt("sketch does not match the engine state"));
        }
        if state.last_version() != snap.version {
            return Err(corrupt("version does not match the engine state"));
        }
        if snap.history.last() != Some(&(snap.version, snap.sketch.clone())) {
            return Err(corrupt("history does not end at the current sketch"));
        }
        let width = state.catalog().width();
        if snap.history.iter().any(|(_, s)| s.width() != width) {
            return Err(corrupt("history sketch of the wrong width"));
        }
        let mut entry = SketchEntry::new(snap.id, state, snap.sketch, snap.version);
        entry.history = snap.history;
        Ok(entry)
    }
}
