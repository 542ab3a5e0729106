//! The sketch registry: capture, maintenance and answering queries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use log::{debug, info};
use parking_lot::{Mutex, RwLock};
use sketchd_core::{
    exec, sketch_apply_delta, AnnotatedDeltaDatabase, BagRelation, DeltaDatabase, PartitionCatalog,
    QueryPlan, Sketch,
};
use sketchd_engine::{init_state, plan_pushdown, BufferConfig, EngineError};
use sketchd_store::{Store, VersionId};

use crate::entry::{EntryId, SketchEntry};
use crate::error::{ManagerError, Result};
use crate::instrument::eval_instrumented;
use crate::template::QueryTemplate;

/// When registered sketches are maintained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// After every `batch_size` committed delta rows.
    Eager { batch_size: u64 },
    /// Only when a query uses the sketch.
    #[default]
    Lazy,
}

pub const DEFAULT_BATCH_SIZE: u64 = 50;

/// Which registered sketches a query may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reuse {
    /// Same template and the same constants.
    #[default]
    Exact,
    /// Also allows different having constants and top-k limits. Only sound
    /// when the caller knows the sketch covers the new query.
    Relaxed,
}

impl FromStr for Reuse {
    type Err = ManagerError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Reuse::Exact),
            "relaxed" => Ok(Reuse::Relaxed),
            _ => Err(ManagerError::InvalidConfig(format!("unknown reuse policy {s:?}"))),
        }
    }
}

impl fmt::Display for Reuse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reuse::Exact => "exact",
            Reuse::Relaxed => "relaxed",
        })
    }
}

/// How a stale sketch is brought up to date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Maintenance {
    #[default]
    Incremental,
    /// Recapture from scratch.
    Full,
}

#[derive(Debug, Clone, Default)]
pub struct ManagerConfig {
    pub strategy: Strategy,
    pub reuse: Reuse,
    pub maintenance: Maintenance,
    pub buffers: BufferConfig,
    /// Engine states kept in memory; older ones are evicted.
    pub memory_cap: Option<usize>,
    pub state_dir: Option<PathBuf>,
}

impl ManagerConfig {
    pub fn validate(&self) -> Result<()> {
        if let Strategy::Eager { batch_size: 0 } = self.strategy {
            return Err(ManagerError::InvalidConfig("eager batch size must be at least 1".into()));
        }
        if self.memory_cap == Some(0) {
            return Err(ManagerError::InvalidConfig("memory cap must be at least 1".into()));
        }
        self.buffers.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ManagerStats {
    pub captures: u64,
    pub maintenances: u64,
    pub recaptures: u64,
    pub evictions: u64,
    /// Delta rows handed to the engine.
    pub delta_rows: u64,
}

/// Result of [`SketchManager::answer_query`].
#[derive(Debug, Clone)]
pub struct Answer {
    pub result: BagRelation,
    pub entry: EntryId,
    pub sketch: Sketch,
    pub version: VersionId,
    pub captured: bool,
}

#[derive(Debug, Default)]
struct Pending {
    rows: u64,
    relations: BTreeSet<String>,
}

pub struct SketchManager {
    store: Arc<Store>,
    config: ManagerConfig,
    entries: RwLock<BTreeMap<EntryId, Arc<Mutex<SketchEntry>>>>,
    next_id: AtomicU64,
    clock: AtomicU64,
    pending: Mutex<Pending>,
    stats: Mutex<ManagerStats>,
}

impl SketchManager {
    pub fn new(store: Arc<Store>, config: ManagerConfig) -> Result<Self> {
        config.validate()?;
        if let Some(dir) = &config.state_dir {
            std::fs::create_dir_all(dir)?;
        }
        Ok(SketchManager {
            store,
            config,
            entries: RwLock::new(BTreeMap::new()),
            next_id: AtomicU64::new(0),
            clock: AtomicU64::new(0),
            pending: Mutex::new(Pending::default()),
            stats: Mutex::new(ManagerStats::default()),
        })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.config
    }

    pub fn stats(&self) -> ManagerStats {
        *self.stats.lock()
    }

    pub fn entry_ids(&self) -> Vec<EntryId> {
        self.entries.read().keys().copied().collect()
    }

    fn entry(&self, id: EntryId) -> Result<Arc<Mutex<SketchEntry>>> {
        self.entries.read().get(&id).cloned().ok_or(ManagerError::UnknownEntry(id))
    }

    /// Runs `f` on an entry while holding its lock.
    pub fn with_entry<T>(&self, id: EntryId, f: impl FnOnce(&SketchEntry) -> T) -> Result<T> {
        let e = self.entry(id)?;
        let guard = e.lock();
        Ok(f(&guard))
    }

    fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::Relaxed) + 1
    }

    fn register(&self, mut entry: SketchEntry) -> EntryId {
        let id = entry.id;
        entry.last_used = self.tick();
        self.entries.write().insert(id, Arc::new(Mutex::new(entry)));
        self.next_id.fetch_max(id + 1, Ordering::Relaxed);
        id
    }

    /// Captures a sketch at the current version and registers it.
    pub fn capture(&self, plan: &QueryPlan, catalog: Arc<PartitionCatalog>) -> Result<EntryId> {
        let plan = with_merge(plan);
        let snapshot = self.store.current();
        let (mut state, sketch) = init_state(&plan, &snapshot, catalog, self.config.buffers)?;
        state.set_last_version(snapshot.version());
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        info!("captured entry {id} at version {} with {} fragments", snapshot.version(), sketch.len());
        self.stats.lock().captures += 1;
        let id = self.register(SketchEntry::new(id, state, sketch, snapshot.version()));
        self.enforce_cap()?;
        Ok(id)
    }

    /// Commits a batch. Under the eager strategy, affected entries are
    /// maintained once enough delta rows have accumulated.
    pub fn on_update(&self, batch: &DeltaDatabase) -> Result<VersionId> {
        let version = self.store.commit_delta(batch)?;
        if let Strategy::Eager { batch_size } = self.config.strategy {
            let due = {
                let mut p = self.pending.lock();
                p.rows += batch.size();
                p.relations.extend(batch.names().map(str::to_string));
                if p.rows >= batch_size {
                    p.rows = 0;
                    Some(std::mem::take(&mut p.relations))
                } else {
                    None
                }
            };
            if let Some(relations) = due {
                self.maintain_where(|e| relations.iter().any(|r| e.plan.references(r)))?;
            }
        }
        Ok(version)
    }

    /// Brings every registered entry up to the current version.
    pub fn maintain_all(&self) -> Result<()> {
        self.maintain_where(|_| true)
    }

    fn maintain_where(&self, pick: impl Fn(&SketchEntry) -> bool + Sync + Send) -> Result<()> {
        let entries: Vec<Arc<Mutex<SketchEntry>>> = self.entries.read().values().cloned().collect();
        let results = exec::for_each_task(entries, |e| {
            let mut guard = e.lock();
            if pick(&guard) {
                self.maintain_locked(&mut guard)
            } else {
                Ok(())
            }
        });
        results.into_iter().collect::<Result<()>>()?;
        self.enforce_cap()
    }

    pub fn maintain(&self, id: EntryId) -> Result<Sketch> {
        let e = self.entry(id)?;
        let sketch = {
            let mut guard = e.lock();
            self.maintain_locked(&mut guard)?;
            guard.sketch.clone()
        };
        self.enforce_cap()?;
        Ok(sketch)
    }

    fn maintain_locked(&self, e: &mut SketchEntry) -> Result<()> {
        let current = self.store.version();
        if e.version >= current {
            return Ok(());
        }
        let from = e.version;
        let pushdown = plan_pushdown(&e.plan);
        let use_pushdown = self.config.buffers.pushdown;
        let plan_relations = e.plan.relations();
        let catalog = e.catalog.clone();
        let full = self.config.maintenance == Maintenance::Full;
        let state = e.state_mut()?;
        let sketch = if full {
            self.stats.lock().recaptures += 1;
            state.recapture(&self.store.snapshot(current)?)?
        } else {
            let mut raw = DeltaDatabase::new();
            for rel in plan_relations {
                let pred = if use_pushdown { pushdown.predicate(&rel) } else { None };
                let d = self.store.extract_delta(&rel, from, current, pred)?;
                if !d.is_empty() {
                    raw.insert(d);
                }
            }
            let delta = AnnotatedDeltaDatabase::annotate(&raw, &catalog)?;
            self.stats.lock().delta_rows += delta.size();
            match state.process_delta(&delta, &self.store.snapshot(from)?) {
                Ok(d) => sketch_apply_delta(&e.sketch, &d)?,
                Err(EngineError::RecaptureRequired(why)) => {
                    debug!("entry {} needs recapture: {why}", e.id);
                    self.stats.lock().recaptures += 1;
                    let state = e.state_mut()?;
                    state.recapture(&self.store.snapshot(current)?)?
                }
                Err(err) => {
                    e.state_mut()?.recapture(&self.store.snapshot(current)?)?;
                    return Err(err.into());
                }
            }
        };
        e.state_mut()?.set_last_version(current);
        e.advance(sketch, current);
        e.last_used = self.tick();
        self.stats.lock().maintenances += 1;
        Ok(())
    }

    /// Finds a registered entry usable for `plan` under the reuse policy.
    pub fn lookup(&self, plan: &QueryPlan, catalog: &PartitionCatalog) -> Option<EntryId> {
        let template = QueryTemplate::of(&with_merge(plan));
        let entries = self.entries.read();
        entries.iter().find_map(|(id, e)| {
            let e = e.lock();
            let fits = match self.config.reuse {
                Reuse::Exact => e.template == template,
                Reuse::Relaxed => e.template.same_family(&template),
            };
            (fits && *e.catalog == *catalog).then_some(*id)
        })
    }

    /// Answers `plan` from a sketch, capturing one first if none fits. The
    /// sketch is maintained to the current version before use.
    pub fn answer_query(&self, plan: &QueryPlan, catalog: Arc<PartitionCatalog>) -> Result<Answer> {
        let (id, captured) = match self.lookup(plan, &catalog) {
            Some(id) => (id, false),
            None => (self.capture(plan, catalog)?, true),
        };
        let e = self.entry(id)?;
        let answer = {
            let mut guard = e.lock();
            self.maintain_locked(&mut guard)?;
            guard.last_used = self.tick();
            let snapshot = self.store.snapshot(guard.version)?;
            let result = eval_instrumented(&snapshot, plan, &guard.sketch, &guard.catalog)?;
            Answer {
                result,
                entry: id,
                sketch: guard.sketch.clone(),
                version: guard.version,
                captured,
            }
        };
        self.enforce_cap()?;
        Ok(answer)
    }

    /// Evaluates `plan` restricted to `sketch` at the current version, without
    /// any maintenance.
    pub fn eval_with_sketch(&self, plan: &QueryPlan, sketch: &Sketch, catalog: &PartitionCatalog) -> Result<BagRelation> {
        eval_instrumented(&self.store.current(), plan, sketch, catalog)
    }

    pub fn persist_entry(&self, id: EntryId) -> Result<String> {
        self.entry(id)?.lock().persist()
    }

    /// Registers an entry from a snapshot, replacing one with the same id.
    pub fn restore_entry(&self, text: &str) -> Result<EntryId> {
        let entry = SketchEntry::restore(text)?;
        if entry.version > self.store.version() {
            return Err(ManagerError::CorruptSnapshot(format!(
                "entry is at version {} but the store is at {}",
                entry.version,
                self.store.version()
            )));
        }
        let id = self.register(entry);
        self.enforce_cap()?;
        Ok(id)
    }

    pub fn remove(&self, id: EntryId) -> Result<SketchEntry> {
        let e = self.entries.write().remove(&id).ok_or(ManagerError::UnknownEntry(id))?;
        let entry = match Arc::try_unwrap(e) {
            Ok(m) => m.into_inner(),
            Err(shared) => {
                let guard = shared.lock();
                let text = guard.persist()?;
                drop(guard);
                SketchEntry::restore(&text)?
            }
        };
        Ok(entry)
    }

    pub fn evict(&self, id: EntryId) -> Result<()> {
        let e = self.entry(id)?;
        let mut guard = e.lock();
        if guard.is_live() {
            guard.evict(self.config.state_dir.as_deref())?;
            self.stats.lock().evictions += 1;
        }
        Ok(())
    }

    /// Evicts least recently used engine states beyond the memory cap.
    fn enforce_cap(&self) -> Result<()> {
        let Some(cap) = self.config.memory_cap else { return Ok(()) };
        let entries: Vec<Arc<Mutex<SketchEntry>>> = self.entries.read().values().cloned().collect();
        let mut live: Vec<(u64, Arc<Mutex<SketchEntry>>)> = entries
            .into_iter()
            .filter_map(|e| {
                let used = e.try_lock().filter(|g| g.is_live()).map(|g| g.last_used)?;
                Some((used, e))
            })
            .collect();
        if live.len() <= cap {
            return Ok(());
        }
        live.sort_by_key(|(used, _)| *used);
        let excess = live.len() - cap;
        for (_, e) in live.into_iter().take(excess) {
            if let Some(mut g) = e.try_lock() {
                debug!("evicting entry {}", g.id);
                g.evict(self.config.state_dir.as_deref())?;
                self.stats.lock().evictions += 1;
            }
        }
        Ok(())
    }
}

fn with_merge(plan: &QueryPlan) -> QueryPlan {
    if plan.is_merge() {
        plan.clone()
    } else {
        plan.clone().merge()
    }
}
