//! Random test cases: a small two-table database, range partitions, a query
//! and a mixed delta.
//!
//! Plans are built so that their sketches are safe. Every column carries a
//! direction describing how its value can move when the query runs over a
//! subset of the input: `Exact` columns keep their values, `Up` columns can
//! only shrink (sums, counts and maxima of non-negative data) and `Down`
//! columns can only grow (minima). Selections above aggregates only compare
//! `Up` columns with `>` and `Down` columns with `<`, group-by and join keys
//! are `Exact`, and top-k only appears at the root, optionally under a
//! projection, ordering by every column.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketchd_core::{
    apply_delta, eval, AggCall, AggFn, BagRelation, CmpOp, Database, DeltaDatabase, DeltaRelation, DeltaTuple,
    Kind, Partition, PartitionCatalog, Predicate, QueryPlan, RangePartition, ScalarExpr, Schema, SortKey, Tuple,
    Value,
};

pub const KEY_DOMAIN: i64 = 20;
pub const VALUE_DOMAIN: i64 = 100;
pub const MAX_ROWS: usize = 500;
pub const MAX_DELTA: usize = 50;
pub const MAX_DEPTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Exact,
    Up,
    Down,
    Unsafe,
}

#[derive(Debug, Clone)]
struct Column {
    name: String,
    dir: Direction,
    /// Drawn from the small key domain, so equality joins are selective.
    key: bool,
}

pub fn r_schema() -> Arc<Schema> {
    Arc::new(Schema::of("r", &[("a", Kind::I64), ("b", Kind::I64), ("c", Kind::I64)]))
}

pub fn s_schema() -> Arc<Schema> {
    Arc::new(Schema::of("s", &[("d", Kind::I64), ("e", Kind::I64), ("f", Kind::I64)]))
}

fn base_columns(table: &str) -> Vec<Column> {
    let names: [&str; 3] = if table == "r" { ["a", "b", "c"] } else { ["d", "e", "f"] };
    names
        .iter()
        .enumerate()
        .map(|(i, n)| Column {
            name: n.to_string(),
            dir: Direction::Exact,
            key: i == 0,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Case {
    pub seed: u64,
    /// Rooted at a merge operator.
    pub plan: QueryPlan,
    pub db: Database,
    pub delta: DeltaDatabase,
    pub after: Database,
    pub catalog: Arc<PartitionCatalog>,
}

fn random_row(rng: &mut ChaCha8Rng) -> Tuple {
    Tuple::new(vec![
        Value::I64(rng.random_range(0..KEY_DOMAIN)),
        Value::I64(rng.random_range(0..VALUE_DOMAIN)),
        Value::I64(rng.random_range(0..VALUE_DOMAIN)),
    ])
}

fn database(rng: &mut ChaCha8Rng) -> Database {
    let mut db = Database::new();
    for schema in [r_schema(), s_schema()] {
        let n = if rng.random_bool(0.5) {
            rng.random_range(0..=MAX_ROWS / 8)
        } else {
            rng.random_range(0..=MAX_ROWS)
        };
        let rows: Vec<Tuple> = (0..n).map(|_| random_row(rng)).collect();
        db.insert(BagRelation::from_tuples(schema, rows));
    }
    db
}

fn partition(rng: &mut ChaCha8Rng, table: &str) -> Partition {
    let cols = base_columns(table);
    let col = &cols[rng.random_range(0..cols.len())];
    let top = if col.key { KEY_DOMAIN - 1 } else { VALUE_DOMAIN - 1 };
    let fragments = rng.random_range(4..=16usize);
    let mut inner: Vec<i64> = (1..top).collect();
    inner.shuffle(rng);
    inner.truncate(fragments - 1);
    inner.sort_unstable();
    let mut bounds = vec![Value::I64(0)];
    bounds.extend(inner.into_iter().map(Value::I64));
    bounds.push(Value::I64(top));
    Partition::Ranges(RangePartition::from_boundaries(table, &col.name, bounds).expect("increasing"))
}

/// Up to [`MAX_DELTA`] rows over both tables. Deletes only remove rows that
/// are present.
fn delta(rng: &mut ChaCha8Rng, db: &Database) -> DeltaDatabase {
    let mut left: Vec<Vec<(Tuple, u64)>> = ["r", "s"]
        .iter()
        .map(|t| db.get(t).expect("generated").rows().to_vec())
        .collect();
    let mut rows: [Vec<DeltaTuple>; 2] = [Vec::new(), Vec::new()];
    for _ in 0..rng.random_range(1..=MAX_DELTA) {
        let t = rng.random_range(0..2);
        let pool = &mut left[t];
        if pool.is_empty() || rng.random_bool(0.5) {
            rows[t].push(DeltaTuple::insert(random_row(rng), rng.random_range(1..=2)));
        } else {
            let i = rng.random_range(0..pool.len());
            let n = rng.random_range(1..=pool[i].1);
            rows[t].push(DeltaTuple::delete(pool[i].0.clone(), n));
            pool[i].1 -= n;
            if pool[i].1 == 0 {
                pool.swap_remove(i);
            }
        }
    }
    let [r, s] = rows;
    DeltaDatabase::new()
        .with(DeltaRelation::new(r_schema(), r))
        .with(DeltaRelation::new(s_schema(), s))
}

struct PlanGen<'a> {
    rng: &'a mut ChaCha8Rng,
    db: &'a Database,
    names: usize,
}

impl PlanGen<'_> {
    fn fresh(&mut self, prefix: &str) -> String {
        self.names += 1;
        format!("{prefix}{}", self.names)
    }

    /// A constant seen in `column` of the plan's current result, so
    /// comparisons split the data.
    fn constant(&mut self, plan: &QueryPlan, column: usize, key: bool) -> i64 {
        let observed = eval(plan, self.db).ok().and_then(|rel| {
            let rows = rel.rows();
            if rows.is_empty() {
                return None;
            }
            rows[self.rng.random_range(0..rows.len())].0.get(column).as_i64()
        });
        observed.unwrap_or_else(|| self.rng.random_range(0..if key { KEY_DOMAIN } else { VALUE_DOMAIN }))
    }

    fn node(&mut self, budget: usize, table: Option<&str>) -> (QueryPlan, Vec<Column>) {
        let scan = |t: &str| (QueryPlan::scan(t), base_columns(t));
        if budget <= 1 || self.rng.random_bool(0.2) {
            let t = table.unwrap_or(if self.rng.random_bool(0.5) { "r" } else { "s" });
            return scan(t);
        }
        match self.rng.random_range(0..10) {
            0..=2 => self.select(budget, table),
            3 | 4 => self.project(budget, table),
            5..=7 => self.aggregate(budget, table),
            _ if table.is_none() => self.join(budget),
            _ => self.select(budget, table),
        }
    }

    fn select(&mut self, budget: usize, table: Option<&str>) -> (QueryPlan, Vec<Column>) {
        let (child, cols) = self.node(budget - 1, table);
        let usable: Vec<usize> = (0..cols.len()).filter(|&i| cols[i].dir != Direction::Unsafe).collect();
        let Some(&i) = usable.get(self.rng.random_range(0..usable.len().max(1))) else {
            return (child, cols);
        };
        let ops: &[CmpOp] = match cols[i].dir {
            Direction::Exact => &[CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne],
            Direction::Up => &[CmpOp::Gt, CmpOp::Ge],
            Direction::Down => &[CmpOp::Lt, CmpOp::Le],
            Direction::Unsafe => unreachable!(),
        };
        let op = ops[self.rng.random_range(0..ops.len())];
        let c = self.constant(&child, i, cols[i].key);
        (child.select(Predicate::attr_cmp(&cols[i].name, op, c)), cols)
    }

    fn project(&mut self, budget: usize, table: Option<&str>) -> (QueryPlan, Vec<Column>) {
        let (child, cols) = self.node(budget - 1, table);
        let mut keep: Vec<Column> = cols.iter().filter(|_| self.rng.random_bool(0.7)).cloned().collect();
        if keep.is_empty() {
            keep.push(cols[self.rng.random_range(0..cols.len())].clone());
        }
        let mut items: Vec<(ScalarExpr, String)> =
            keep.iter().map(|c| (ScalarExpr::attr(&c.name), c.name.clone())).collect();
        if self.rng.random_bool(0.3) {
            let x = &cols[self.rng.random_range(0..cols.len())];
            let y = &cols[self.rng.random_range(0..cols.len())];
            let dir = match (x.dir, y.dir) {
                (Direction::Exact, Direction::Exact) => Some(Direction::Exact),
                (Direction::Exact | Direction::Up, Direction::Exact | Direction::Up) => Some(Direction::Up),
                (Direction::Exact | Direction::Down, Direction::Exact | Direction::Down) => Some(Direction::Down),
                _ => None,
            };
            if let Some(dir) = dir {
                let name = self.fresh("p");
                items.push((ScalarExpr::attr(&x.name).add(ScalarExpr::attr(&y.name)), name.clone()));
                keep.push(Column { name, dir, key: false });
            }
        }
        let plan = child.project(items.iter().map(|(e, n)| (e.clone(), n.as_str())).collect());
        (plan, keep)
    }

    fn aggregate(&mut self, budget: usize, table: Option<&str>) -> (QueryPlan, Vec<Column>) {
        let (child, cols) = self.node(budget - 1, table);
        let mut exact: Vec<&Column> = cols.iter().filter(|c| c.dir == Direction::Exact).collect();
        if exact.is_empty() {
            return (child, cols);
        }
        exact.shuffle(self.rng);
        let groups: Vec<Column> = exact
            .into_iter()
            .take(self.rng.random_range(1..=2))
            .cloned()
            .collect();
        let mut out = groups.clone();
        let mut calls = Vec::new();
        for _ in 0..self.rng.random_range(1..=2) {
            let arg = &cols[self.rng.random_range(0..cols.len())];
            let funcs = [AggFn::Sum, AggFn::Count, AggFn::Avg, AggFn::Min, AggFn::Max];
            let func = funcs[self.rng.random_range(0..funcs.len())];
            use Direction::*;
            let dir = match (func, arg.dir) {
                (AggFn::Count, _) => Up,
                (AggFn::Avg, _) => Unsafe,
                (AggFn::Sum | AggFn::Max, Exact | Up) => Up,
                (AggFn::Min, Exact | Down) => Down,
                _ => Unsafe,
            };
            let name = self.fresh("x");
            calls.push(AggCall::new(func, &arg.name, &name));
            out.push(Column { name, dir, key: false });
        }
        let names: Vec<&str> = groups.iter().map(|c| c.name.as_str()).collect();
        (child.aggregate(&names, calls), out)
    }

    fn join(&mut self, budget: usize) -> (QueryPlan, Vec<Column>) {
        let (left, lcols) = self.node(budget - 1, Some("r"));
        let (right, rcols) = self.node(budget - 1, Some("s"));
        let pick = |cols: &[Column], key: bool| -> Vec<String> {
            cols.iter()
                .filter(|c| c.dir == Direction::Exact && c.key == key)
                .map(|c| c.name.clone())
                .collect()
        };
        for key in [true, false] {
            let (l, r) = (pick(&lcols, key), pick(&rcols, key));
            if !l.is_empty() && !r.is_empty() {
                let l = &l[self.rng.random_range(0..l.len())];
                let r = &r[self.rng.random_range(0..r.len())];
                let mut cols = lcols.clone();
                cols.extend(rcols.iter().cloned());
                return (left.join(right, Predicate::attr_eq(l, r)), cols);
            }
        }
        (left, lcols)
    }

    fn root(&mut self) -> QueryPlan {
        let depth = self.rng.random_range(1..=MAX_DEPTH);
        let topk = depth >= 2 && self.rng.random_bool(0.3);
        let project_top = topk && depth >= 3 && self.rng.random_bool(0.3);
        let budget = depth - topk as usize - project_top as usize;
        let (plan, cols) = self.node(budget, None);
        if !topk || cols.iter().any(|c| c.dir == Direction::Unsafe) {
            return plan;
        }
        let mut order: Vec<SortKey> = cols
            .iter()
            .map(|c| match c.dir {
                Direction::Up => SortKey::desc(&c.name),
                Direction::Down => SortKey::asc(&c.name),
                _ if self.rng.random_bool(0.5) => SortKey::desc(&c.name),
                _ => SortKey::asc(&c.name),
            })
            .collect();
        order.shuffle(self.rng);
        let plan = plan.top_k(self.rng.random_range(1..=5), order);
        if !project_top {
            return plan;
        }
        let keep: Vec<(ScalarExpr, &str)> = cols
            .iter()
            .filter(|_| self.rng.random_bool(0.6))
            .map(|c| (ScalarExpr::attr(&c.name), c.name.as_str()))
            .collect();
        if keep.is_empty() {
            plan
        } else {
            plan.project(keep)
        }
    }
}

/// Deterministic case for `seed`.
pub fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let db = database(&mut rng);
    let catalog = Arc::new(PartitionCatalog::new(vec![partition(&mut rng, "r"), partition(&mut rng, "s")]).expect("distinct"));
    let plan = PlanGen {
        rng: &mut rng,
        db: &db,
        names: 0,
    }
    .root()
    .merge();
    let delta = delta(&mut rng, &db);
    let after = apply_delta(&db, &delta).expect("deletes only remove present rows");
    Case {
        seed,
        plan,
        db,
        delta,
        after,
        catalog,
    }
}
