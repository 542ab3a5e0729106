//! Initial build and delta maintenance, on the global rayon pool and on a
//! single-thread pool. Build with `--no-default-features` for the fully
//! sequential code path.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketchd_core::{
    AggCall, AggFn, AnnotatedDeltaDatabase, BagRelation, CmpOp, Database, DeltaDatabase,
    DeltaRelation, DeltaTuple, Kind, Partition, PartitionCatalog, Predicate, QueryPlan,
    RangePartition, Schema, Tuple, Value,
};
use sketchd_engine::{init_state, BufferConfig};

const ROWS: usize = 200_000;
const GROUPS: i64 = 1_000;

fn schema() -> Arc<Schema> {
    Arc::new(Schema::of("t", &[("a", Kind::I64), ("b", Kind::I64), ("c", Kind::I64)]))
}

fn row(rng: &mut ChaCha8Rng) -> Tuple {
    let a = rng.random_range(0..GROUPS);
    Tuple::new(vec![
        Value::I64(a),
        Value::I64(a * 3 + rng.random_range(0..50)),
        Value::I64(rng.random_range(0..1_000)),
    ])
}

fn setup() -> (Database, Arc<PartitionCatalog>, QueryPlan) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<Tuple> = (0..ROWS).map(|_| row(&mut rng)).collect();
    let db = Database::new().with(BagRelation::from_tuples(schema(), rows));
    let bounds: Vec<Value> = (0..=64).map(|i| Value::I64(i * GROUPS / 64)).collect();
    let p = RangePartition::from_boundaries("t", "a", bounds).unwrap();
    let catalog = Arc::new(PartitionCatalog::new(vec![Partition::Ranges(p)]).unwrap());
    let plan = QueryPlan::scan("t")
        .aggregate(&["a"], vec![AggCall::new(AggFn::Sum, "c", "s"), AggCall::new(AggFn::Max, "b", "m")])
        .select(Predicate::attr_cmp("s", CmpOp::Gt, 100_000))
        .merge();
    (db, catalog, plan)
}

fn delta(n: usize) -> DeltaDatabase {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows = (0..n).map(|_| DeltaTuple::insert(row(&mut rng), 1)).collect();
    DeltaDatabase::new().with(DeltaRelation::new(schema(), rows))
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("parallel", rayon::ThreadPoolBuilder::new().build().unwrap()),
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
    ]
}

fn bench_init(c: &mut Criterion) {
    let (db, catalog, plan) = setup();
    let mut group = c.benchmark_group("init");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| pool.install(|| init_state(&plan, &db, catalog.clone(), BufferConfig::default()).unwrap()))
        });
    }
    group.finish();
}

fn bench_maintain(c: &mut Criterion) {
    let (db, catalog, plan) = setup();
    let (state, _) = init_state(&plan, &db, catalog.clone(), BufferConfig::default()).unwrap();
    let mut group = c.benchmark_group("maintain");
    group.sample_size(20);
    for n in [1_000, 10_000] {
        let d = AnnotatedDeltaDatabase::annotate(&delta(n), &catalog).unwrap();
        for (name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(name, n), &d, |b, d| {
                b.iter_batched(
                    || state.clone(),
                    |mut s| pool.install(|| black_box(s.process_delta(d, &db).unwrap())),
                    BatchSize::LargeInput,
                )
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_init, bench_maintain);
criterion_main!(benches);
