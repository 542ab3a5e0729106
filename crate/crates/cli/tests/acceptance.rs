//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketchd::compare::{crossover, median};
use sketchd::corpus::{self, Case};
use sketchd::synth::{self, RowSource, SynthConfig, UPDATE_ID_BASE};
use sketchd::workload::{group_boundaries, group_having_query, having_threshold};
use sketchd_core::fixtures::{
    new_sale_delta, price_catalog, q_all_rules, q_top, rs_catalog, rs_db, rs_delta, sales, sales_rows, sales_schema,
};
use sketchd_core::{
    apply_annotated_delta, apply_delta, eval, eval_annotated, sketch_instance, tuple, tuples_in, AggCall, AggFn,
    AnnotatedDatabase, AnnotatedDelta, AnnotatedDeltaDatabase, AnnotatedDeltaTuple, BagRelation, Database,
    DeltaDatabase, DeltaRelation, DeltaTuple, FragmentId, Kind, Partition, PartitionCatalog, PartitionSpec,
    Predicate, QueryPlan, RangePartition, Schema, Sketch, SketchDelta, SortKey, Tag, Tuple, Value,
};
use sketchd_engine::{init_state, BufferConfig, EngineError, MergeState, TopKBuffer};
use sketchd_manager::{Maintenance, ManagerConfig, SketchManager};
use sketchd_store::Store;

type Check = Result<String, String>;
type CheckFn<'a> = dyn Fn() -> Check + 'a;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn ids(width: u32, ids: &[u32]) -> Sketch {
    Sketch::from_ids(width, ids.iter().map(|&i| FragmentId(i)))
}

fn net(delta: &AnnotatedDelta) -> BTreeMap<(Tuple, Sketch), i64> {
    delta.net_counts().into_iter().filter(|(_, n)| *n != 0).collect()
}

fn annotate(delta: &DeltaDatabase, catalog: &PartitionCatalog) -> Result<AnnotatedDeltaDatabase, String> {
    ok(AnnotatedDeltaDatabase::annotate(delta, catalog))
}

fn store_of(db: &Database) -> Result<Store, String> {
    let store = Store::with_chunk_capacity(64);
    for rel in db.relations() {
        ok(store.load_relation(rel))?;
    }
    Ok(store)
}

fn running_example() -> Check {
    let start = Instant::now();
    let store = Store::new();
    ok(store.load_relation(&sales()))?;
    let m = ok(SketchManager::new(Arc::new(store), ManagerConfig::default()))?;
    let catalog = Arc::new(price_catalog());
    let id = ok(m.capture(&q_top(), catalog.clone()))?;
    let captured = ok(m.with_entry(id, |e| e.sketch().clone()))?;
    ensure!(captured == ids(4, &[2, 3]), "captured {captured}, expected fragments 2 and 3");

    let db = ok(m.store().current().database())?;
    let instance = ok(sketch_instance(&captured, &db, &catalog))?;
    let expected = BagRelation::from_tuples(sales_schema(), sales_rows()[2..5].to_vec());
    ensure!(ok(instance.get("sales"))? == &expected, "instance is not s3, s4, s5");

    ok(m.on_update(&new_sale_delta()))?;
    let maintained = ok(m.maintain(id))?;
    let added = maintained.difference(&captured);
    let removed = captured.difference(&maintained);
    ensure!(
        added == ids(4, &[1]) && removed.is_empty(),
        "sketch delta +{added} -{removed}, expected +{{1}}"
    );
    let answer = ok(m.answer_query(&q_top(), catalog))?;
    let schema = Arc::new(Schema::of("q", &[("brand", Kind::Str), ("rev", Kind::I64)]));
    let want = BagRelation::from_tuples(schema, vec![tuple!["Apple", 5074], tuple!["HP", 6194]]);
    ensure!(answer.result == want, "answer {}", answer.result);
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(1), "took {took:?}");
    Ok(format!("sketch {captured} -> {maintained}, answer matches, {took:.1?}"))
}

fn merge_operator() -> Check {
    let mut m = MergeState::from_counts(vec![1, 3]);
    let row = AnnotatedDeltaTuple::new(Tag::Delete, tuple![3], ids(2, &[0, 1]), 1);
    let d = ok(m.apply(&[row]))?;
    let want = ok(SketchDelta::new(ids(2, &[]), ids(2, &[0])))?;
    ensure!(d == want, "sketch delta {d:?}");
    ensure!(m.counts() == [0, 2], "counts {:?}", m.counts());
    Ok("delta -{0}, counts [0, 2]".into())
}

fn all_rules() -> Check {
    let catalog = Arc::new(rs_catalog());
    let db = rs_db();
    let (mut state, _) = ok(init_state(&q_all_rules(), &db, catalog.clone(), BufferConfig::exact()))?;
    let trace = ok(state.process_delta_traced(&annotate(&rs_delta(), &catalog)?, &db))?;
    let output = |label: &str| {
        trace
            .operators
            .iter()
            .find(|t| t.operator == label)
            .map(|t| net(&t.output))
            .ok_or_else(|| format!("no {label} in trace"))
    };
    let f1g2 = ids(4, &[0, 3]);
    let join = output("join")?;
    ensure!(
        join == BTreeMap::from([((tuple![5, 8, 7, 8], f1g2.clone()), 1)]),
        "join output {join:?}"
    );
    let agg = output("aggregate")?;
    ensure!(agg == BTreeMap::from([((tuple![5, 7], f1g2.clone()), 1)]), "aggregate output {agg:?}");
    let want = ok(SketchDelta::new(f1g2, ids(4, &[])))?;
    ensure!(trace.sketch_delta == want, "sketch delta {:?}", trace.sketch_delta);
    Ok("join, aggregate and sketch deltas match".into())
}

const CORPUS: u64 = 500;

struct CorpusStats {
    cases: u64,
    joins: u64,
    topk: u64,
    aggregates: u64,
    recaptures: u64,
    nonempty_changes: u64,
}

fn has(plan: &QueryPlan, f: &impl Fn(&QueryPlan) -> bool) -> bool {
    f(plan) || plan.children().iter().any(|c| has(c, f))
}

fn corpus_stats(cases: &[Case]) -> CorpusStats {
    let count = |f: &dyn Fn(&QueryPlan) -> bool| cases.iter().filter(|c| has(&c.plan, &f)).count() as u64;
    CorpusStats {
        cases: cases.len() as u64,
        joins: count(&|p| matches!(p, QueryPlan::Join { .. })),
        topk: count(&|p| matches!(p, QueryPlan::TopK { .. })),
        aggregates: count(&|p| matches!(p, QueryPlan::Aggregate { .. })),
        recaptures: 0,
        nonempty_changes: 0,
    }
}

fn describe(c: &Case) -> String {
    format!("seed {}: {}", c.seed, serde_json::to_string(&c.plan).unwrap_or_default())
}

fn oracle_equivalence(cases: &[Case]) -> Check {
    let start = Instant::now();
    let mut stats = corpus_stats(cases);
    for c in cases {
        let delta = annotate(&c.delta, &c.catalog)?;
        let (mut state, before) = ok(init_state(&c.plan, &c.db, c.catalog.clone(), BufferConfig::exact()))?;
        ok(state.process_delta(&delta, &c.db)).map_err(|e| format!("{}: {e}", describe(c)))?;
        let (fresh, accurate) = ok(init_state(&c.plan, &c.after, c.catalog.clone(), BufferConfig::exact()))?;
        ensure!(
            state.sketch() == &accurate,
            "{}: maintained {} but recapture gives {accurate}",
            describe(c),
            state.sketch()
        );
        ensure!(
            ok(state.persist())? == ok(fresh.persist())?,
            "{}: maintained state differs from recaptured state",
            describe(c)
        );
        if before != accurate {
            stats.nonempty_changes += 1;
        }

        let store = store_of(&c.db)?;
        let (mut opt, _) = ok(init_state(&c.plan, &store.current(), c.catalog.clone(), BufferConfig::default()))?;
        let snapshot = store.current();
        ok(store.commit_delta(&c.delta))?;
        let sketch = match opt.process_delta(&delta, &snapshot) {
            Ok(_) => opt.sketch().clone(),
            Err(EngineError::RecaptureRequired(_)) => {
                stats.recaptures += 1;
                ok(opt.recapture(&store.current()))?
            }
            Err(e) => return Err(format!("{}: {e}", describe(c))),
        };
        ensure!(
            accurate.is_subset(&sketch),
            "{}: optimized sketch {sketch} misses fragments of {accurate}",
            describe(c)
        );
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(120), "took {took:?}");
    Ok(format!(
        "{} cases ({} joins, {} aggregates, {} top-k, {} changed sketches, {} optimized recaptures), {took:.1?}",
        stats.cases, stats.joins, stats.aggregates, stats.topk, stats.nonempty_changes, stats.recaptures
    ))
}

fn tuple_and_fragment_correctness(cases: &[Case]) -> Check {
    for c in cases {
        let q = c.plan.without_merge();
        let width = c.catalog.width();
        let adb = ok(AnnotatedDatabase::annotate(&c.db, &c.catalog))?;
        let old = ok(eval_annotated(q, &adb, width))?
            .into_relation()
            .ok_or_else(|| format!("{}: annotated result is not a relation", describe(c)))?;
        let (mut state, _) = ok(init_state(&c.plan, &c.db, c.catalog.clone(), BufferConfig::exact()))?;
        let trace = ok(state.process_delta_traced(&annotate(&c.delta, &c.catalog)?, &c.db))?;
        let new = ok(apply_annotated_delta(&old, &trace.output))?;
        let truth = ok(eval(q, &c.after))?;
        ensure!(tuples_in(&new) == truth, "{}: tuples of maintained result differ", describe(c));

        for sketch in [state.sketch().clone(), optimized_sketch(c)?] {
            let instance = ok(sketch_instance(&sketch, &c.after, &c.catalog))?;
            let on_sketch = ok(eval(q, &instance))?;
            ensure!(
                on_sketch == truth,
                "{}: query over sketch {sketch} gives {on_sketch}, expected {truth}",
                describe(c)
            );
        }
    }
    Ok(format!("{} cases, exact and optimized sketches", cases.len()))
}

fn optimized_sketch(c: &Case) -> Result<Sketch, String> {
    let (mut state, _) = ok(init_state(&c.plan, &c.db, c.catalog.clone(), BufferConfig::default()))?;
    match state.process_delta(&annotate(&c.delta, &c.catalog)?, &c.db) {
        Ok(_) => Ok(state.sketch().clone()),
        Err(EngineError::RecaptureRequired(_)) => ok(state.recapture(&c.after)),
        Err(e) => Err(format!("{}: {e}", describe(c))),
    }
}

fn batching_equivalence(cases: &[Case]) -> Check {
    let mut units = 0usize;
    for c in cases {
        let (mut whole, _) = ok(init_state(&c.plan, &c.db, c.catalog.clone(), BufferConfig::exact()))?;
        ok(whole.process_delta(&annotate(&c.delta, &c.catalog)?, &c.db))?;
        let (mut split, _) = ok(init_state(&c.plan, &c.db, c.catalog.clone(), BufferConfig::exact()))?;
        let mut db = c.db.clone();
        for rel in c.delta.relations() {
            for unit in rel.unit_batches() {
                units += 1;
                let d = DeltaDatabase::new().with(unit);
                ok(split.process_delta(&annotate(&d, &c.catalog)?, &db))?;
                db = ok(apply_delta(&db, &d))?;
            }
        }
        ensure!(split.sketch() == whole.sketch(), "{}: sketches differ", describe(c));
        ensure!(
            ok(split.persist())? == ok(whole.persist())?,
            "{}: states differ",
            describe(c)
        );
    }
    Ok(format!("{} cases, {units} singleton batches", cases.len()))
}

const TABLE_ROWS: u64 = 1_000_000;
const GROUPS: u64 = 5_000;
const FRAGMENTS: u64 = 64;
const REPS: usize = 5;

struct Bench {
    store: Arc<Store>,
    catalog: Arc<PartitionCatalog>,
    inserted: u64,
}

impl Bench {
    fn new() -> Result<Self, String> {
        let cfg = SynthConfig {
            rows: TABLE_ROWS,
            groups: GROUPS,
            seed: 7,
            sigma: 1.0,
        };
        let table = ok(synth::generate("t", cfg))?;
        let store = Store::new();
        ok(store.load_relation(&table))?;
        let catalog = ok(PartitionCatalog::from_specs(&[PartitionSpec {
            relation: "t".into(),
            attribute: Some("a".into()),
            boundaries: group_boundaries(GROUPS, FRAGMENTS),
        }]))?;
        Ok(Bench {
            store: Arc::new(store),
            catalog: Arc::new(catalog),
            inserted: 0,
        })
    }

    /// Inserts rows until `total` rows have been added since the load.
    fn grow_to(&mut self, total: u64) -> Result<(), String> {
        let n = total - self.inserted;
        let mut src = ok(RowSource::new(GROUPS, 1.0, 1000 + total, UPDATE_ID_BASE + self.inserted as i64))?;
        let rows = (0..n).map(|_| DeltaTuple::insert(src.next_row(), 1)).collect();
        let schema = ok(self.store.schema("t"))?;
        ok(self.store.commit_delta(&DeltaDatabase::new().with(DeltaRelation::new(schema, rows))))?;
        self.inserted = total;
        Ok(())
    }

    fn manager(&self, maintenance: Maintenance) -> Result<SketchManager, String> {
        ok(SketchManager::new(
            self.store.clone(),
            ManagerConfig {
                maintenance,
                ..ManagerConfig::default()
            },
        ))
    }
}

/// A captured entry that can be reset to its capture-time state.
struct Timed {
    manager: SketchManager,
    id: u64,
    snapshot: String,
}

impl Timed {
    fn new(bench: &Bench, plan: &QueryPlan, maintenance: Maintenance) -> Result<Self, String> {
        let manager = bench.manager(maintenance)?;
        let id = ok(manager.capture(plan, bench.catalog.clone()))?;
        let snapshot = ok(manager.persist_entry(id))?;
        Ok(Timed { manager, id, snapshot })
    }

    /// Median over [`REPS`] runs, after one warm-up, of bringing the entry
    /// from its capture version to the current one.
    fn median_maintenance(&self) -> Result<(f64, Sketch), String> {
        let mut times = Vec::new();
        let mut sketch = None;
        for rep in 0..=REPS {
            ok(self.manager.restore_entry(&self.snapshot))?;
            let start = Instant::now();
            let s = ok(self.manager.maintain(self.id))?;
            let t = start.elapsed().as_secs_f64();
            if rep > 0 {
                times.push(t);
            }
            sketch = Some(s);
        }
        Ok((median(&mut times).expect("reps"), sketch.expect("reps")))
    }
}

struct Scaling {
    /// (delta rows, IMP seconds, FM seconds) for the group-by-having query.
    having: Vec<(u64, f64, f64)>,
    /// (delta rows, IMP seconds) for the aggregation-only query.
    aggregation: Vec<(u64, f64)>,
}

const BREAK_EVEN_SIZES: [u64; 4] = [1_000, 10_000, 50_000, 200_000];
const LINEAR_SIZES: [u64; 5] = [1_000, 5_000, 10_000, 50_000, 100_000];

fn scaling_run() -> Result<Scaling, String> {
    let mut bench = Bench::new()?;
    let having = group_having_query("t", having_threshold(TABLE_ROWS));
    let aggregation = QueryPlan::scan("t").aggregate(&["a"], vec![AggCall::new(AggFn::Sum, "c", "sc")]);
    let imp = Timed::new(&bench, &having, Maintenance::Incremental)?;
    let fm = Timed::new(&bench, &having, Maintenance::Full)?;
    let agg = Timed::new(&bench, &aggregation, Maintenance::Incremental)?;

    let mut sizes: Vec<u64> = BREAK_EVEN_SIZES.iter().chain(&LINEAR_SIZES).copied().collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut out = Scaling {
        having: Vec::new(),
        aggregation: Vec::new(),
    };
    for size in sizes {
        bench.grow_to(size)?;
        if BREAK_EVEN_SIZES.contains(&size) {
            let (ti, si) = imp.median_maintenance()?;
            let (tf, sf) = fm.median_maintenance()?;
            if si != sf {
                return Err(format!("IMP and FM sketches differ at delta {size}: {si} vs {sf}"));
            }
            out.having.push((size, ti, tf));
        }
        if LINEAR_SIZES.contains(&size) {
            out.aggregation.push((size, agg.median_maintenance()?.0));
        }
    }
    Ok(out)
}

fn imp_vs_fm(s: &Scaling) -> Check {
    let pct = |d: u64| 100.0 * d as f64 / TABLE_ROWS as f64;
    let series: Vec<String> = s
        .having
        .iter()
        .map(|(d, i, f)| format!("{}%: imp {:.2}ms fm {:.2}ms ratio {:.3}", pct(*d), i * 1e3, f * 1e3, i / f))
        .collect();
    let detail = series.join("; ");
    let (_, i1k, f1k) = s.having.iter().find(|(d, _, _)| *d == 1_000).ok_or("no 1k point")?;
    ensure!(i1k * 10.0 <= *f1k, "1k-row delta: IMP/FM ratio {:.3} > 0.1 ({detail})", i1k / f1k);
    let points: Vec<(f64, f64)> = s.having.iter().map(|(d, i, f)| (pct(*d), i / f)).collect();
    match crossover(&points) {
        Some(x) if x > 1.0 && x <= 20.0 => Ok(format!("break-even at {x:.2}% ({detail})")),
        Some(x) => Err(format!("break-even at {x:.2}%, outside (1%, 20%] ({detail})")),
        None => Err(format!("IMP/FM ratio never reaches 1 up to 20% ({detail})")),
    }
}

fn r_squared(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|(_, y)| (y - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy * sxy / (sxx * syy)
}

fn linear_scaling(s: &Scaling) -> Check {
    let points: Vec<(f64, f64)> = s.aggregation.iter().map(|(d, t)| (*d as f64, *t)).collect();
    let r2 = r_squared(&points);
    let series: Vec<String> = s
        .aggregation
        .iter()
        .map(|(d, t)| format!("{d}: {:.2}ms", t * 1e3))
        .collect();
    ensure!(r2 >= 0.9, "R² {r2:.4} < 0.9 ({})", series.join(", "));
    Ok(format!("R² {r2:.4} ({})", series.join(", ")))
}

fn join_fixture(rng: &mut ChaCha8Rng, s_rows: i64, delta_rows: usize) -> (Database, DeltaDatabase, Arc<PartitionCatalog>) {
    let r = Arc::new(Schema::of("r", &[("a", Kind::I64), ("x", Kind::I64)]));
    let s = Arc::new(Schema::of("s", &[("c", Kind::I64), ("y", Kind::I64)]));
    let s_data: Vec<Tuple> = (0..s_rows).map(|c| tuple![c, rng.random_range(0..100i64)]).collect();
    let r_data: Vec<Tuple> = (0..100i64).map(|i| tuple![i * 7 % s_rows, rng.random_range(0..100i64)]).collect();
    let db = Database::new()
        .with(BagRelation::from_tuples(r.clone(), r_data))
        .with(BagRelation::from_tuples(s, s_data));
    let matching = delta_rows / 100;
    let rows = (0..delta_rows)
        .map(|i| {
            let key = if i < matching {
                rng.random_range(0..s_rows)
            } else {
                s_rows + 1_000_000 + i as i64
            };
            DeltaTuple::insert(tuple![key, rng.random_range(0..100i64)], 1)
        })
        .collect();
    let delta = DeltaDatabase::new().with(DeltaRelation::new(r, rows));
    let bounds = |hi: i64| -> Vec<Value> { (0..=8).map(|i| Value::I64(i * hi / 8)).collect() };
    let catalog = PartitionCatalog::new(vec![
        Partition::Ranges(RangePartition::from_boundaries("r", "x", bounds(100)).expect("bounds")),
        Partition::Ranges(RangePartition::from_boundaries("s", "y", bounds(100)).expect("bounds")),
    ])
    .expect("catalog");
    (db, delta, Arc::new(catalog))
}

fn join_plan() -> QueryPlan {
    QueryPlan::scan("r")
        .join(QueryPlan::scan("s"), Predicate::attr_eq("a", "c"))
        .aggregate(&["a"], vec![AggCall::new(AggFn::Count, "y", "n")])
        .merge()
}

fn bloom_config(on: bool) -> BufferConfig {
    BufferConfig {
        bloom: on,
        bloom_fpr: 0.01,
        ..BufferConfig::default()
    }
}

fn bloom_effectiveness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (db, delta, catalog) = join_fixture(&mut rng, 50_000, 10_000);
    let store = store_of(&db)?;
    let snapshot = store.current();
    let adelta = annotate(&delta, &catalog)?;
    let mut sketches = Vec::new();
    let mut fraction = 0.0;
    for on in [true, false] {
        let (mut state, _) = ok(init_state(&join_plan(), &snapshot, catalog.clone(), bloom_config(on)))?;
        ok(state.process_delta(&adelta, &snapshot))?;
        if on {
            let st = state.stats();
            ensure!(st.bloom_probes == 10_000, "{} probes for 10000 delta rows", st.bloom_probes);
            fraction = st.bloom_forwarded as f64 / st.bloom_probes as f64;
        }
        sketches.push(state.sketch().clone());
    }
    ensure!(fraction <= 0.025, "forwarded {:.2}% of delta rows", fraction * 100.0);
    ensure!(sketches[0] == sketches[1], "bloom on {} vs off {}", sketches[0], sketches[1]);

    let mut instances = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (db, delta, catalog) = join_fixture(&mut rng, 1_000, 1_000);
        let join = QueryPlan::scan("r").join(QueryPlan::scan("s"), Predicate::attr_eq("a", "c")).merge();
        let (mut state, _) = ok(init_state(&join, &db, catalog.clone(), bloom_config(true)))?;
        let trace = ok(state.process_delta_traced(&annotate(&delta, &catalog)?, &db))?;
        let after = ok(apply_delta(&db, &delta))?;
        let eval_join = |d: &Database| -> Result<_, String> {
            let adb = ok(AnnotatedDatabase::annotate(d, &catalog))?;
            Ok(ok(eval_annotated(join.without_merge(), &adb, catalog.width()))?
                .into_relation()
                .ok_or("not a relation")?
                .counts())
        };
        let mut exhaustive: BTreeMap<(Tuple, Sketch), i64> = BTreeMap::new();
        for (k, n) in eval_join(&after)? {
            *exhaustive.entry(k).or_default() += n as i64;
        }
        for (k, n) in eval_join(&db)? {
            *exhaustive.entry(k).or_default() -= n as i64;
        }
        exhaustive.retain(|_, n| *n != 0);
        ensure!(!exhaustive.is_empty(), "seed {seed}: no joining delta rows");
        ensure!(net(&trace.output) == exhaustive, "seed {seed}: bloom dropped joining rows");
        instances += 1;
    }
    Ok(format!(
        "forwarded {:.2}% of 10000 rows, equal sketches, {instances} exhaustive checks",
        fraction * 100.0
    ))
}

fn bounded_topk() -> Check {
    const ROWS: i64 = 2_000;
    const K: u64 = 10;
    const STEPS: usize = 200;
    let schema = Arc::new(Schema::of("t", &[("g", Kind::I64), ("v", Kind::I64)]));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut values: Vec<i64> = (0..ROWS).collect();
    values.shuffle(&mut rng);
    let rows: Vec<Tuple> = values.iter().enumerate().map(|(g, v)| tuple![g as i64, *v]).collect();
    let db0 = Database::new().with(BagRelation::from_tuples(schema.clone(), rows.clone()));
    let bounds: Vec<Value> = (0..=16).map(|i| Value::I64(i * (ROWS - 1) / 16)).collect();
    let catalog = Arc::new(
        PartitionCatalog::new(vec![Partition::Ranges(
            RangePartition::from_boundaries("t", "v", bounds).expect("bounds"),
        )])
        .expect("catalog"),
    );
    let plan = QueryPlan::scan("t").top_k(K, vec![SortKey::desc("v")]).merge();
    let mut by_value = rows;
    by_value.sort_by(|a, b| b.get(1).cmp(a.get(1)));

    let mut counts = Vec::new();
    for l in [20u64, 50, 100] {
        let config = BufferConfig {
            topk: TopKBuffer::Fixed(l),
            ..BufferConfig::exact()
        };
        let (mut bounded, _) = ok(init_state(&plan, &db0, catalog.clone(), config))?;
        let (mut oracle, _) = ok(init_state(&plan, &db0, catalog.clone(), BufferConfig::exact()))?;
        let mut db = db0.clone();
        let mut recaptures = 0;
        for (step, victim) in by_value.iter().take(STEPS).enumerate() {
            let raw = DeltaDatabase::new().with(DeltaRelation::new(schema.clone(), vec![DeltaTuple::delete(victim.clone(), 1)]));
            let delta = annotate(&raw, &catalog)?;
            let after = ok(apply_delta(&db, &raw))?;
            ok(oracle.process_delta(&delta, &db))?;
            match bounded.process_delta(&delta, &db) {
                Ok(_) => {}
                Err(EngineError::RecaptureRequired(_)) => {
                    recaptures += 1;
                    let s = ok(bounded.recapture(&after))?;
                    ensure!(&s == oracle.sketch(), "l={l} step {step}: recaptured {s} vs oracle {}", oracle.sketch());
                }
                Err(e) => return Err(e.to_string()),
            }
            ensure!(
                bounded.sketch() == oracle.sketch(),
                "l={l} step {step}: {} vs oracle {}",
                bounded.sketch(),
                oracle.sketch()
            );
            db = after;
        }
        counts.push((l, recaptures));
    }
    let detail: Vec<String> = counts.iter().map(|(l, n)| format!("l={l}: {n}")).collect();
    ensure!(
        counts.windows(2).all(|w| w[1].1 < w[0].1),
        "recaptures not strictly decreasing in l ({})",
        detail.join(", ")
    );
    Ok(format!("recaptures {}", detail.join(", ")))
}

fn persistence_round_trip() -> Check {
    let dir = ok(tempfile::tempdir())?;
    let mut entries = 0;
    for seed in 10_000..10_100u64 {
        let c = corpus::case(seed);
        let store = Arc::new(store_of(&c.db)?);
        let live = ok(SketchManager::new(store.clone(), ManagerConfig::default()))?;
        let evicted = ok(SketchManager::new(
            store.clone(),
            ManagerConfig {
                state_dir: Some(dir.path().join(seed.to_string())),
                ..ManagerConfig::default()
            },
        ))?;
        let id = ok(live.capture(&c.plan, c.catalog.clone()))?;
        let restored = ok(evicted.restore_entry(&ok(live.persist_entry(id))?))?;
        ok(evicted.evict(restored))?;
        ensure!(!ok(evicted.with_entry(restored, |e| e.is_live()))?, "seed {seed}: entry still live");
        ok(store.commit_delta(&c.delta))?;
        let a = ok(live.maintain(id))?;
        let b = ok(evicted.maintain(restored))?;
        let (ja, jb) = (ok(serde_json::to_string(&a))?, ok(serde_json::to_string(&b))?);
        ensure!(ja == jb, "seed {seed}: {ja} vs {jb}");
        ensure!(
            ok(live.persist_entry(id))? == ok(evicted.persist_entry(restored))?,
            "seed {seed}: entry snapshots differ"
        );
        entries += 1;
    }
    Ok(format!("{entries} entries"))
}

fn main() -> ExitCode {
    let cases: Vec<Case> = (0..CORPUS).map(corpus::case).collect();
    let scaling = std::cell::OnceCell::new();
    let scaled = || -> Result<&Scaling, String> {
        match scaling.get_or_init(scaling_run) {
            Ok(s) => Ok(s),
            Err(e) => Err(e.clone()),
        }
    };
    let checks: Vec<(&str, Box<CheckFn<'_>>)> = vec![
        ("running example", Box::new(running_example)),
        ("merge operator", Box::new(merge_operator)),
        ("all rules", Box::new(all_rules)),
        ("oracle equivalence", Box::new(|| oracle_equivalence(&cases))),
        ("tuple and fragment correctness", Box::new(|| tuple_and_fragment_correctness(&cases))),
        ("batching equivalence", Box::new(|| batching_equivalence(&cases))),
        ("IMP vs FM", Box::new(|| imp_vs_fm(scaled()?))),
        ("linear scaling", Box::new(|| linear_scaling(scaled()?))),
        ("bloom effectiveness", Box::new(bloom_effectiveness)),
        ("bounded top-k", Box::new(bounded_topk)),
        ("persistence round trip", Box::new(persistence_round_trip)),
    ];
    let total = checks.len();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS [{}/{total}] {name}: {detail} ({took:.1?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}/{total}] {name}: {why} ({took:.1?})", i + 1);
            }
        }
    }
    println!("{} of {total} passed", total - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
