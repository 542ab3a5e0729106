//! Versioned in-memory table store.
//!
//! Each table keeps its initial load as consolidated columnar chunks and every
//! later change in an append-only delta log tagged with the committing
//! version. Readers take immutable [`Snapshot`]s; commits go through a single
//! writer and publish a new state atomically.

mod chunk;

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::sync::{Arc, OnceLock};

use arc_swap::ArcSwap;
use indexmap::IndexMap;
use parking_lot::Mutex;
use sketchd_core::annotated::AnnotatedDeltaTuple;
use sketchd_core::bind::BoundPredicate;
use sketchd_core::source::{JoinRequest, Side};
use sketchd_core::{
    csv_io, exec, BagRelation, ColumnBatch, Database, DeltaDatabase, DeltaRelation, DeltaTuple, Predicate,
    Range, Schema, TableSource, Tag, Tuple, Value,
};

pub use chunk::{Chunk, ZoneMap, DEFAULT_CHUNK_CAPACITY};

pub type VersionId = u64;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("table {0:?} already exists")]
    DuplicateName(String),
    #[error("cannot load rows into {table:?}: version {version} is already committed")]
    AlreadyCommitted { table: String, version: VersionId },
    #[error("version {requested} is unknown; the current version is {current}")]
    UnknownVersion { requested: VersionId, current: VersionId },
    #[error("unknown table {0:?}")]
    UnknownTable(String),
    #[error("ill-formed delta: {0}")]
    IllFormedDelta(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] sketchd_core::Error),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

impl From<StoreError> for sketchd_core::Error {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Core(e) => e,
            StoreError::UnknownTable(t) => sketchd_core::Error::UnknownRelation(t),
            StoreError::IllFormedDelta(m) => sketchd_core::Error::IllFormedDelta(m),
            other => sketchd_core::Error::Io(other.to_string()),
        }
    }
}

/// Names a registered table.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TableHandle {
    name: String,
}

impl TableHandle {
    pub fn name(&self) -> &str {
        &self.name
    }
}


#[derive(Debug, Clone)]
struct LogEntry {
    version: VersionId,
    rows: Arc<Vec<DeltaTuple>>,
}

/// Finds base rows by value. Built on first use, which only happens once
/// deletes reach the base.
#[derive(Debug, Default)]
struct Locator {
    entries: Vec<(u64, u32, u32)>,
}

fn tuple_hash(t: &Tuple) -> u64 {
    let mut h = DefaultHasher::new();
    t.hash(&mut h);
    h.finish()
}

impl Locator {
    fn build(chunks: &[Chunk]) -> Locator {
        let ids: Vec<usize> = (0..chunks.len()).collect();
        let parts = exec::map_units(&ids, |&c| {
            let chunk = &chunks[c];
            (0..chunk.len())
                .map(|r| (tuple_hash(&chunk.row(r)), c as u32, r as u32))
                .collect::<Vec<_>>()
        });
        let mut entries: Vec<(u64, u32, u32)> = parts.into_iter().flatten().collect();
        entries.sort_unstable();
        Locator { entries }
    }

    fn positions<'a>(&'a self, chunks: &'a [Chunk], t: &'a Tuple) -> impl Iterator<Item = (usize, usize)> + 'a {
        let h = tuple_hash(t);
        let start = self.entries.partition_point(|e| e.0 < h);
        self.entries[start..]
            .iter()
            .take_while(move |e| e.0 == h)
            .map(|e| (e.1 as usize, e.2 as usize))
            .filter(move |&(c, r)| &chunks[c].row(r) == t)
    }
}

#[derive(Debug, Clone)]
struct TableState {
    schema: Arc<Schema>,
    chunks: Arc<Vec<Chunk>>,
    base_rows: u64,
    log: Vec<LogEntry>,
    locator: Arc<OnceLock<Locator>>,
}

impl TableState {
    fn new(schema: Arc<Schema>, chunks: Vec<Chunk>) -> Self {
        let base_rows = chunks.iter().map(|c| c.batch.multiplicities.iter().sum::<u64>()).sum();
        TableState {
            schema,
            chunks: Arc::new(chunks),
            base_rows,
            log: Vec::new(),
            locator: Arc::new(OnceLock::new()),
        }
    }

    fn locator(&self) -> &Locator {
        self.locator.get_or_init(|| Locator::build(&self.chunks))
    }

    fn base_multiplicity(&self, t: &Tuple) -> u64 {
        self.locator()
            .positions(&self.chunks, t)
            .map(|(c, r)| self.chunks[c].batch.multiplicities[r])
            .sum()
    }

    /// Net signed change of log entries in `(from, to]`.
    fn net_between(&self, from: VersionId, to: VersionId) -> IndexMap<Tuple, i64> {
        let start = self.log.partition_point(|e| e.version <= from);
        let mut net: IndexMap<Tuple, i64> = IndexMap::new();
        for entry in self.log[start..].iter().take_while(|e| e.version <= to) {
            for r in entry.rows.iter() {
                *net.entry(r.tuple.clone()).or_insert(0) += r.signed();
            }
        }
        net.retain(|_, n| *n != 0);
        net
    }
}

#[derive(Debug, Clone, Default)]
struct StoreState {
    version: VersionId,
    tables: BTreeMap<String, Arc<TableState>>,
}

impl StoreState {
    fn table(&self, name: &str) -> Result<&Arc<TableState>> {
        self.tables
            .get(name)
            .ok_or_else(|| StoreError::UnknownTable(name.to_string()))
    }
}

/// Cumulative net change since version 0 per table, used to validate deletes.
#[derive(Default)]
struct WriterState {
    net: HashMap<String, HashMap<Tuple, i64>>,
}

pub struct Store {
    state: ArcSwap<StoreState>,
    writer: Mutex<WriterState>,
    chunk_capacity: usize,
}

impl Default for Store {
    fn default() -> Self {
        Self::new()
    }
}

impl Store {
    pub fn new() -> Self {
        Self::with_chunk_capacity(DEFAULT_CHUNK_CAPACITY)
    }

    pub fn with_chunk_capacity(chunk_capacity: usize) -> Self {
        Store {
            state: ArcSwap::from_pointee(StoreState::default()),
            writer: Mutex::new(WriterState::default()),
            chunk_capacity: chunk_capacity.max(1),
        }
    }

    pub fn version(&self) -> VersionId {
        self.state.load().version
    }

    pub fn table_names(&self) -> Vec<String> {
        self.state.load().tables.keys().cloned().collect()
    }

    pub fn schema(&self, name: &str) -> Result<Arc<Schema>> {
        Ok(self.state.load().table(name)?.schema.clone())
    }

    pub fn handle(&self, name: &str) -> Result<TableHandle> {
        self.state.load().table(name)?;
        Ok(TableHandle { name: name.to_string() })
    }

    pub fn create_table(&self, schema: Schema) -> Result<TableHandle> {
        schema.validate()?;
        let _w = self.writer.lock();
        let current = self.state.load_full();
        if current.tables.contains_key(&schema.name) {
            return Err(StoreError::DuplicateName(schema.name.clone()));
        }
        let mut next = (*current).clone();
        let name = schema.name.clone();
        next.tables
            .insert(name.clone(), Arc::new(TableState::new(Arc::new(schema), Vec::new())));
        self.state.store(Arc::new(next));
        Ok(TableHandle { name })
    }

    /// Adds rows to the version-0 base of a table.
    pub fn load_rows(&self, handle: &TableHandle, rows: impl IntoIterator<Item = (Tuple, u64)>) -> Result<()> {
        let schema = self.schema(&handle.name)?;
        let rows: Vec<(Tuple, u64)> = rows.into_iter().filter(|(_, n)| *n > 0).collect();
        for (t, _) in &rows {
            schema.check(t)?;
        }
        let batch = ColumnBatch::from_rows(&schema, rows.iter().map(|(t, n)| (t, *n)))?;
        self.load_batch(handle, &batch)
    }

    /// Adds column-wise rows to the version-0 base of a table.
    pub fn load_batch(&self, handle: &TableHandle, batch: &ColumnBatch) -> Result<()> {
        let _w = self.writer.lock();
        let current = self.state.load_full();
        if current.version > 0 {
            return Err(StoreError::AlreadyCommitted {
                table: handle.name.clone(),
                version: current.version,
            });
        }
        let table = current.table(&handle.name)?;
        let kinds_match = batch.columns.len() == table.schema.arity()
            && batch
                .columns
                .iter()
                .zip(&table.schema.attributes)
                .all(|(c, a)| c.kind() == a.kind);
        if !kinds_match {
            return Err(sketchd_core::Error::SchemaMismatch(format!(
                "columns do not match the schema of {}",
                handle.name
            ))
            .into());
        }
        let mut chunks: Vec<Chunk> = table.chunks.to_vec();
        chunks.extend(Chunk::split(batch, self.chunk_capacity));
        let mut next = (*current).clone();
        next.tables
            .insert(handle.name.clone(), Arc::new(TableState::new(table.schema.clone(), chunks)));
        self.state.store(Arc::new(next));
        Ok(())
    }

    pub fn load_relation(&self, rel: &BagRelation) -> Result<TableHandle> {
        let handle = self.create_table((**rel.schema()).clone())?;
        self.load_rows(&handle, rel.rows().iter().cloned())?;
        Ok(handle)
    }

    /// Loads a CSV file with a `name:kind` header into an existing table.
    pub fn load_csv(&self, handle: &TableHandle, input: impl Read) -> Result<()> {
        let schema = self.schema(&handle.name)?;
        let batch = csv_io::read_batch(&handle.name, input, &schema)?;
        self.load_batch(handle, &batch)
    }

    /// Applies a batch atomically across its tables and returns the new version.
    pub fn commit_delta(&self, batch: &DeltaDatabase) -> Result<VersionId> {
        let mut w = self.writer.lock();
        let current = self.state.load_full();
        let version = current.version + 1;
        let mut next = (*current).clone();
        next.version = version;

        let mut staged = Vec::new();
        for delta in batch.relations() {
            let name = &delta.schema().name;
            let table = current.table(name)?;
            if !table.schema.same_shape(delta.schema()) {
                return Err(sketchd_core::Error::SchemaMismatch(format!(
                    "delta for {name} does not match the table schema"
                ))
                .into());
            }
            for r in delta.rows() {
                table.schema.check(&r.tuple)?;
            }
            let net = delta.net_counts();
            let cumulative = w.net.get(name.as_str());
            for (t, n) in net.iter().filter(|(_, n)| **n < 0) {
                let logged = cumulative.and_then(|c| c.get(t)).copied().unwrap_or(0);
                // Only consult the base when the log alone cannot cover the delete.
                let have = if logged + n >= 0 {
                    logged
                } else {
                    logged + table.base_multiplicity(t) as i64
                };
                if have + n < 0 {
                    return Err(StoreError::IllFormedDelta(format!(
                        "deleting {} copies of {t} from {name} but only {have} exist",
                        -n
                    )));
                }
            }
            staged.push((name.clone(), net));
        }

        for (name, net) in staged {
            if net.is_empty() {
                continue;
            }
            let cumulative = w.net.entry(name.clone()).or_default();
            for (t, n) in &net {
                let e = cumulative.entry(t.clone()).or_insert(0);
                *e += n;
                if *e == 0 {
                    cumulative.remove(t);
                }
            }
            let rows = net
                .into_iter()
                .map(|(tuple, n)| DeltaTuple {
                    tag: if n > 0 { Tag::Insert } else { Tag::Delete },
                    tuple,
                    multiplicity: n.unsigned_abs(),
                })
                .collect();
            let mut table = (**current.table(&name)?).clone();
            table.log.push(LogEntry {
                version,
                rows: Arc::new(rows),
            });
            next.tables.insert(name, Arc::new(table));
        }
        self.state.store(Arc::new(next));
        Ok(version)
    }

    pub fn snapshot(&self, version: VersionId) -> Result<Snapshot> {
        let state = self.state.load_full();
        if version > state.version {
            return Err(StoreError::UnknownVersion {
                requested: version,
                current: state.version,
            });
        }
        Ok(Snapshot { state, version })
    }

    pub fn current(&self) -> Snapshot {
        let state = self.state.load_full();
        let version = state.version;
        Snapshot { state, version }
    }

    pub fn scan_snapshot(&self, relation: &str, version: VersionId) -> Result<BagRelation> {
        self.snapshot(version)?.scan_table(relation)
    }

    /// Net delta of `relation` between two versions, optionally restricted to
    /// rows satisfying `predicate`.
    pub fn extract_delta(
        &self,
        relation: &str,
        from: VersionId,
        to: VersionId,
        predicate: Option<&Predicate>,
    ) -> Result<DeltaRelation> {
        let state = self.state.load_full();
        for v in [from, to] {
            if v > state.version {
                return Err(StoreError::UnknownVersion {
                    requested: v,
                    current: state.version,
                });
            }
        }
        if from > to {
            return Err(StoreError::UnknownVersion {
                requested: from,
                current: to,
            });
        }
        let table = state.table(relation)?;
        let filter = predicate
            .map(|p| BoundPredicate::bind(p, &table.schema))
            .transpose()?;
        let mut rows = Vec::new();
        for (tuple, n) in table.net_between(from, to) {
            if let Some(f) = &filter {
                if !f.eval(&tuple)? {
                    continue;
                }
            }
            rows.push(DeltaTuple {
                tag: if n > 0 { Tag::Insert } else { Tag::Delete },
                tuple,
                multiplicity: n.unsigned_abs(),
            });
        }
        Ok(DeltaRelation::new(table.schema.clone(), rows))
    }

    /// Writes the delta log as `version,tag,multiplicity,<columns>`.
    pub fn export_log_csv(&self, relation: &str, output: impl Write) -> Result<()> {
        let state = self.state.load_full();
        let table = state.table(relation)?;
        let mut writer = csv::Writer::from_writer(output);
        let mut header = vec!["version".to_string(), "tag".to_string(), "multiplicity".to_string()];
        header.extend(csv_io::header_of(&table.schema));
        writer.write_record(&header)?;
        for entry in &table.log {
            for r in entry.rows.iter() {
                let mut record = vec![
                    entry.version.to_string(),
                    r.tag.symbol().to_string(),
                    r.multiplicity.to_string(),
                ];
                record.extend(r.tuple.values().iter().map(Value::to_string));
                writer.write_record(&record)?;
            }
        }
        writer.flush().map_err(sketchd_core::Error::from)?;
        Ok(())
    }
}

/// The contents of one table at a snapshot: base chunks whose
/// multiplicities some deletes lowered, plus net inserted rows.
struct CurrentView {
    adjusted: HashMap<usize, Vec<u64>>,
    extra: Vec<(Tuple, u64)>,
}

impl CurrentView {
    fn multiplicities<'a>(&'a self, chunks: &'a [Chunk], c: usize) -> &'a [u64] {
        match self.adjusted.get(&c) {
            Some(m) => m,
            None => &chunks[c].batch.multiplicities,
        }
    }
}

/// An immutable view of every table as of one committed version.
#[derive(Clone)]
pub struct Snapshot {
    state: Arc<StoreState>,
    version: VersionId,
}

impl Snapshot {
    pub fn version(&self) -> VersionId {
        self.version
    }

    fn table(&self, relation: &str) -> Result<&Arc<TableState>> {
        self.state.table(relation)
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.state.tables.keys().map(String::as_str)
    }

    fn view(&self, table: &TableState) -> Result<CurrentView> {
        let mut adjusted: HashMap<usize, Vec<u64>> = HashMap::new();
        let mut extra = Vec::new();
        for (t, d) in table.net_between(0, self.version) {
            if d > 0 {
                extra.push((t, d as u64));
                continue;
            }
            let mut left = d.unsigned_abs();
            for (c, r) in table.locator().positions(&table.chunks, &t) {
                let m = adjusted
                    .entry(c)
                    .or_insert_with(|| table.chunks[c].batch.multiplicities.to_vec());
                let take = m[r].min(left);
                m[r] -= take;
                left -= take;
                if left == 0 {
                    break;
                }
            }
            if left > 0 {
                return Err(StoreError::IllFormedDelta(format!(
                    "log of {} deletes {left} more copies of {t} than exist",
                    table.schema.name
                )));
            }
        }
        Ok(CurrentView { adjusted, extra })
    }

    /// Number of rows, counting multiplicities.
    pub fn row_count(&self, relation: &str) -> Result<u64> {
        let table = self.table(relation)?;
        let delta: i64 = table.net_between(0, self.version).values().sum();
        Ok((table.base_rows as i64 + delta) as u64)
    }

    pub fn scan_table(&self, relation: &str) -> Result<BagRelation> {
        self.scan_filtered(relation, None)
    }

    /// Rows whose `column` falls in one of `ranges`; chunks are skipped by
    /// their zone maps.
    pub fn scan_ranges(&self, relation: &str, column: usize, ranges: &[Range]) -> Result<BagRelation> {
        self.scan_filtered(relation, Some((column, ranges)))
    }

    fn scan_filtered(&self, relation: &str, ranges: Option<(usize, &[Range])>) -> Result<BagRelation> {
        let table = self.table(relation)?;
        let view = self.view(table)?;
        let keep = |t: &Tuple| match ranges {
            None => true,
            Some((col, rs)) => rs.iter().any(|r| r.contains(t.get(col))),
        };
        let ids: Vec<usize> = (0..table.chunks.len()).collect();
        let parts = exec::map_units(&ids, |&c| {
            let chunk = &table.chunks[c];
            if let Some((col, rs)) = ranges {
                if !chunk.may_match(col, rs) {
                    return Vec::new();
                }
            }
            let mults = view.multiplicities(&table.chunks, c);
            (0..chunk.len())
                .filter(|&r| mults[r] > 0)
                .map(|r| (chunk.row(r), mults[r]))
                .filter(|(t, _)| keep(t))
                .collect::<Vec<_>>()
        });
        let extra = view.extra.iter().filter(|(t, _)| keep(t)).cloned();
        let rows = parts.into_iter().flatten().chain(extra);
        Ok(BagRelation::from_counts(table.schema.clone(), rows))
    }

    /// Current rows as column batches: the base chunks, then net inserts.
    pub fn batches(&self, relation: &str) -> Result<Vec<ColumnBatch>> {
        let table = self.table(relation)?;
        let view = self.view(table)?;
        let mut out: Vec<ColumnBatch> = table
            .chunks
            .iter()
            .enumerate()
            .map(|(c, chunk)| match view.adjusted.get(&c) {
                Some(m) => chunk.batch.with_multiplicities(m.clone()),
                None => chunk.batch.clone(),
            })
            .collect();
        if !view.extra.is_empty() {
            out.push(ColumnBatch::from_rows(
                &table.schema,
                view.extra.iter().map(|(t, n)| (t, *n)),
            )?);
        }
        Ok(out)
    }

    /// Every table as a plain database.
    pub fn database(&self) -> Result<Database> {
        let mut db = Database::new();
        for name in self.state.tables.keys() {
            db.insert(self.scan_table(name)?);
        }
        Ok(db)
    }

    fn probe_table(&self, request: &JoinRequest<'_>) -> Result<Vec<AnnotatedDeltaTuple>> {
        let table = self.table(&request.chain.relation)?;
        let view = self.view(table)?;
        let prober = request.prober()?;
        let key_filter = request.base_key_columns().and_then(|cols| {
            let col = *cols.first()?;
            let keys: HashSet<Value> = request
                .delta
                .iter()
                .map(|d| match request.delta_side {
                    Side::Left => d.tuple.get(request.keys.left[0]).clone(),
                    Side::Right => d.tuple.get(request.keys.right[0]).clone(),
                })
                .collect();
            let (lo, hi) = request.delta_key_bounds()?;
            Some((col, keys, Range::closed(lo, hi)))
        });
        let ids: Vec<usize> = (0..table.chunks.len()).collect();
        let parts = exec::try_map_units(&ids, |&c| -> sketchd_core::Result<_> {
            let chunk = &table.chunks[c];
            let mults = view.multiplicities(&table.chunks, c);
            let live = (0..chunk.len()).filter(|&r| mults[r] > 0);
            let rows: Vec<(Tuple, u64)> = match &key_filter {
                Some((col, keys, bounds)) => {
                    if !chunk.may_match(*col, std::slice::from_ref(bounds)) {
                        return Ok(Vec::new());
                    }
                    let column = &chunk.batch.columns[*col];
                    live.filter(|&r| keys.contains(&column.get(r)))
                        .map(|r| (chunk.row(r), mults[r]))
                        .collect()
                }
                None => live.map(|r| (chunk.row(r), mults[r])).collect(),
            };
            prober.probe(rows.iter().map(|(t, n)| (t, *n)))
        })?;
        let mut out: Vec<AnnotatedDeltaTuple> = parts.into_iter().flatten().collect();
        out.extend(prober.probe(view.extra.iter().map(|(t, n)| (t, *n)))?);
        Ok(out)
    }
}

impl TableSource for Snapshot {
    fn schema_of(&self, relation: &str) -> sketchd_core::Result<Arc<Schema>> {
        Ok(self.table(relation)?.schema.clone())
    }

    fn scan(&self, relation: &str) -> sketchd_core::Result<BagRelation> {
        Ok(self.scan_table(relation)?)
    }

    fn scan_batches(&self, relation: &str) -> sketchd_core::Result<Vec<ColumnBatch>> {
        Ok(self.batches(relation)?)
    }

    fn join_delta(&self, request: &JoinRequest<'_>) -> sketchd_core::Result<Vec<AnnotatedDeltaTuple>> {
        if request.delta.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.probe_table(request)?)
    }
}
