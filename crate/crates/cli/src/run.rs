//! Workload replay in three modes and the per-operation report.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sketchd_core::csv_io::parse_header;
use sketchd_core::{
    eval, BagRelation, Database, DeltaDatabase, DeltaRelation, DeltaTuple, Kind, Partition, PartitionCatalog,
    PartitionSpec, QueryPlan, Schema, Sketch, Tuple, Value,
};
use sketchd_manager::{Maintenance, ManagerConfig, SketchManager};
use sketchd_store::Store;

use crate::error::{CliError, Result};
use crate::synth::{self, RowSource, ID_STRIDE, UPDATE_ID_BASE};
use crate::workload::{Generate, Record, UpdateSpec, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Plain evaluation, no sketches.
    Ns,
    /// Sketches recaptured from scratch whenever stale.
    Fm,
    /// Sketches maintained incrementally.
    Imp,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ns => "ns",
            Mode::Fm => "fm",
            Mode::Imp => "imp",
        })
    }
}

impl FromStr for Mode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ns" => Ok(Mode::Ns),
            "fm" => Ok(Mode::Fm),
            "imp" => Ok(Mode::Imp),
            _ => Err(CliError::InvalidArgument(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub index: u64,
    pub kind: String,
    pub mode: Mode,
    pub wall_us: u64,
    pub delta_size: u64,
    pub sketch_fragments: Option<u64>,
    pub recaptures: u64,
    pub checksum: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
}

impl RunReport {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record([
                "index",
                "kind",
                "mode",
                "wall_us",
                "delta_size",
                "sketch_fragments",
                "recaptures",
                "checksum",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?;
        Ok(RunReport { rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::read_csv(File::open(path)?)
    }

    pub fn mode(&self) -> Option<Mode> {
        self.rows.first().map(|r| r.mode)
    }
}

/// Order-independent digest of a bag.
pub fn checksum(rel: &BagRelation) -> u64 {
    rel.iter().fold(0u64, |acc, (t, n)| {
        let mut h = DefaultHasher::new();
        t.hash(&mut h);
        n.hash(&mut h);
        acc.wrapping_add(h.finish())
    })
}

/// What a query returned, kept for inspection after [`Runner::apply`].
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub name: String,
    pub result: BagRelation,
    pub sketch: Option<Sketch>,
}

pub struct Runner {
    mode: Mode,
    store: Arc<Store>,
    manager: Option<SketchManager>,
    specs: Vec<PartitionSpec>,
    queries: BTreeMap<String, QueryPlan>,
    since_query: HashMap<String, u64>,
    last: Option<QueryOutcome>,
    index: u64,
}

impl Runner {
    /// `config` is ignored in NS mode; FM mode forces full maintenance.
    pub fn new(mode: Mode, mut config: ManagerConfig) -> Result<Self> {
        let store = Arc::new(Store::new());
        let manager = match mode {
            Mode::Ns => None,
            Mode::Fm => {
                config.maintenance = Maintenance::Full;
                Some(SketchManager::new(store.clone(), config)?)
            }
            Mode::Imp => {
                config.maintenance = Maintenance::Incremental;
                Some(SketchManager::new(store.clone(), config)?)
            }
        };
        Ok(Runner {
            mode,
            store,
            manager,
            specs: Vec::new(),
            queries: BTreeMap::new(),
            since_query: HashMap::new(),
            last: None,
            index: 0,
        })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn manager(&self) -> Option<&SketchManager> {
        self.manager.as_ref()
    }

    pub fn last_query(&self) -> Option<&QueryOutcome> {
        self.last.as_ref()
    }

    /// Declared partitions, then a single fragment for every other table.
    pub fn catalog(&self) -> Result<Arc<PartitionCatalog>> {
        let mut parts: Vec<Partition> = self.specs.iter().map(PartitionSpec::build).collect::<sketchd_core::Result<_>>()?;
        for t in self.store.table_names() {
            if !self.specs.iter().any(|s| s.relation == t) {
                parts.push(Partition::whole(&t));
            }
        }
        Ok(Arc::new(PartitionCatalog::new(parts)?))
    }

    fn recaptures(&self) -> u64 {
        self.manager.as_ref().map_or(0, |m| m.stats().recaptures)
    }

    pub fn apply(&mut self, record: &Record, base_dir: &Path) -> Result<ReportRow> {
        let recaptures_before = self.recaptures();
        let mut row = ReportRow {
            index: self.index,
            kind: record.kind().to_string(),
            mode: self.mode,
            wall_us: 0,
            delta_size: 0,
            sketch_fragments: None,
            recaptures: 0,
            checksum: None,
        };
        self.index += 1;
        match record {
            Record::CreateTable { name, attributes } => {
                let start = Instant::now();
                self.store.create_table(Schema::new(name.as_str(), attributes.clone())?)?;
                row.wall_us = start.elapsed().as_micros() as u64;
            }
            Record::Load { table, path } => {
                let path = base_dir.join(path);
                let start = Instant::now();
                self.load(table, &path)?;
                row.wall_us = start.elapsed().as_micros() as u64;
            }
            Record::DeclarePartition(spec) => {
                spec.build()?;
                self.specs.retain(|s| s.relation != spec.relation);
                self.specs.push(spec.clone());
            }
            Record::RegisterQuery { name, plan } => {
                plan.validate_structure()?;
                self.queries.insert(name.clone(), plan.clone());
            }
            Record::Update(spec) => {
                let delta = self.build_update(spec)?;
                row.delta_size = delta.size();
                let start = Instant::now();
                match &self.manager {
                    Some(m) => m.on_update(&delta)?,
                    None => self.store.commit_delta(&delta)?,
                };
                row.wall_us = start.elapsed().as_micros() as u64;
                for n in self.since_query.values_mut() {
                    *n += row.delta_size;
                }
            }
            Record::Query { name } => {
                let plan = self
                    .queries
                    .get(name)
                    .ok_or_else(|| CliError::Workload(format!("unknown query {name:?}")))?
                    .clone();
                let catalog = self.catalog()?;
                row.delta_size = self.since_query.insert(name.clone(), 0).unwrap_or(0);
                let start = Instant::now();
                let (result, sketch) = match &self.manager {
                    Some(m) => {
                        let a = m.answer_query(&plan, catalog)?;
                        (a.result, Some(a.sketch))
                    }
                    None => (eval_plain(&self.store, &plan)?, None),
                };
                row.wall_us = start.elapsed().as_micros() as u64;
                row.sketch_fragments = sketch.as_ref().map(|s| s.len() as u64);
                row.checksum = Some(format!("{:016x}", checksum(&result)));
                self.last = Some(QueryOutcome {
                    name: name.clone(),
                    result,
                    sketch,
                });
            }
            Record::Checkpoint { label } => {
                log::info!("checkpoint {label} at version {}", self.store.version());
                let start = Instant::now();
                if let Some(m) = &self.manager {
                    m.maintain_all()?;
                }
                row.wall_us = start.elapsed().as_micros() as u64;
            }
        }
        row.recaptures = self.recaptures() - recaptures_before;
        Ok(row)
    }

    fn load(&self, table: &str, path: &Path) -> Result<()> {
        let handle = match self.store.handle(table) {
            Ok(h) => h,
            Err(_) => {
                let mut reader = csv::Reader::from_reader(File::open(path)?);
                let schema = parse_header(table, reader.headers()?)?;
                self.store.create_table(schema)?
            }
        };
        self.store.load_csv(&handle, File::open(path)?)?;
        Ok(())
    }

    fn build_update(&self, spec: &UpdateSpec) -> Result<DeltaDatabase> {
        let schema = self.store.schema(&spec.table)?;
        let mut rows = Vec::with_capacity(spec.insert.len() + spec.delete.len());
        for values in &spec.insert {
            rows.push(DeltaTuple::insert(coerce(&schema, values)?, 1));
        }
        for values in &spec.delete {
            rows.push(DeltaTuple::delete(coerce(&schema, values)?, 1));
        }
        if let Some(g) = &spec.generate {
            rows.extend(self.generated(&schema, g)?);
        }
        Ok(DeltaDatabase::new().with(DeltaRelation::new(schema, rows)))
    }

    fn generated(&self, schema: &Arc<Schema>, g: &Generate) -> Result<Vec<DeltaTuple>> {
        if !schema.same_shape(&synth::schema(&schema.name)) {
            return Err(CliError::Workload(format!(
                "generated updates need the synthetic schema, {} differs",
                schema.name
            )));
        }
        let first_id = UPDATE_ID_BASE + (g.seed as i64 % (1 << 20)) * ID_STRIDE;
        let mut src = RowSource::new(g.groups, g.sigma, g.seed, first_id)?;
        let mut rows: Vec<DeltaTuple> = (0..g.inserts).map(|_| DeltaTuple::insert(src.next_row(), 1)).collect();
        if g.deletes > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(g.seed ^ 0x5eed_de1e);
            rows.extend(pick_deletes(&self.store, &schema.name, g.deletes, &mut rng)?);
        }
        Ok(rows)
    }

    pub fn run(&mut self, workload: &Workload) -> Result<RunReport> {
        let mut report = RunReport::default();
        for (line, record) in &workload.records {
            let row = self.apply(record, &workload.base_dir).map_err(|e| match e {
                e @ CliError::Parse { .. } => e,
                e => CliError::Workload(format!("line {line}: {e}")),
            })?;
            report.rows.push(row);
        }
        Ok(report)
    }
}

/// Chooses `n` distinct live rows of `table` uniformly at random.
fn pick_deletes(store: &Store, table: &str, n: u64, rng: &mut ChaCha8Rng) -> Result<Vec<DeltaTuple>> {
    let snapshot = store.current();
    let batches = snapshot.batches(table)?;
    let total: u64 = batches.iter().map(|b| b.multiplicities.iter().sum::<u64>()).sum();
    if n > total {
        return Err(CliError::Workload(format!(
            "cannot delete {n} rows from {table}, it holds {total}"
        )));
    }
    let offsets: Vec<usize> = batches
        .iter()
        .scan(0usize, |acc, b| {
            let start = *acc;
            *acc += b.len();
            Some(start)
        })
        .collect();
    let slots: usize = batches.iter().map(|b| b.len()).sum();
    let mut taken: HashMap<usize, u64> = HashMap::new();
    let mut out = Vec::with_capacity(n as usize);
    while (out.len() as u64) < n {
        let pos = rng.random_range(0..slots);
        let b = offsets.partition_point(|&o| o <= pos) - 1;
        let r = pos - offsets[b];
        let live = batches[b].multiplicities[r];
        let used = taken.entry(pos).or_insert(0);
        if *used < live {
            *used += 1;
            out.push(DeltaTuple::delete(batches[b].row(r), 1));
        }
    }
    Ok(out)
}

fn coerce(schema: &Schema, values: &[Value]) -> Result<Tuple> {
    if values.len() != schema.arity() {
        return Err(CliError::Workload(format!(
            "row of {} values for {} with {} attributes",
            values.len(),
            schema.name,
            schema.arity()
        )));
    }
    let t = Tuple::new(
        values
            .iter()
            .zip(&schema.attributes)
            .map(|(v, a)| match (v, a.kind) {
                (Value::I64(x), Kind::F64) => Value::float(*x as f64),
                _ => v.clone(),
            })
            .collect(),
    );
    schema.check(&t)?;
    Ok(t)
}

/// Evaluates a plan over full scans of the current version.
pub fn eval_plain(store: &Store, plan: &QueryPlan) -> Result<BagRelation> {
    let snapshot = store.current();
    let mut db = Database::new();
    for rel in plan.relations() {
        db.insert(snapshot.scan_table(&rel)?);
    }
    Ok(eval(plan.without_merge(), &db)?)
}

pub fn run_workload(workload: &Workload, mode: Mode, config: ManagerConfig) -> Result<RunReport> {
    Runner::new(mode, config)?.run(workload)
}
