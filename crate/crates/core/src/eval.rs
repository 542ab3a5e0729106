//! Plain bag-semantics evaluation.

use std::cmp::Ordering;
use std::collections::HashMap;

use indexmap::IndexMap;

use crate::bind::{compare_by, reject_merge, BoundAgg, BoundNode, BoundPlan, BoundSort};
use crate::error::{Error, Result};
use crate::plan::{AggFn, QueryPlan};
use crate::relation::{BagRelation, Database};
use crate::value::{Kind, Tuple, Value};

/// Evaluates a plan without a merge root over a database.
pub fn eval(plan: &QueryPlan, db: &Database) -> Result<BagRelation> {
    let bound = BoundPlan::bind(plan, db)?;
    reject_merge(&bound)?;
    eval_bound(&bound, db)
}

pub fn eval_bound(plan: &BoundPlan, db: &Database) -> Result<BagRelation> {
    let schema = plan.schema.clone();
    match &plan.node {
        BoundNode::Scan { relation } => {
            let rel = db.get(relation)?;
            Ok(BagRelation::from_consolidated(schema, rel.rows().to_vec()))
        }
        BoundNode::Select { predicate, input } => {
            let rel = eval_bound(input, db)?;
            let mut rows = Vec::new();
            for (t, n) in rel.into_rows() {
                if predicate.eval(&t)? {
                    rows.push((t, n));
                }
            }
            Ok(BagRelation::from_consolidated(schema, rows))
        }
        BoundNode::Project { exprs, input } => {
            let rel = eval_bound(input, db)?;
            let mut rows = Vec::with_capacity(rel.distinct_len());
            for (t, n) in rel.iter() {
                let values = exprs.iter().map(|e| e.eval(t)).collect::<Result<Vec<_>>>()?;
                rows.push((Tuple::new(values), n));
            }
            Ok(BagRelation::from_counts(schema, rows))
        }
        BoundNode::Join { keys, left, right } => {
            let l = eval_bound(left, db)?;
            let r = eval_bound(right, db)?;
            let mut rows = Vec::new();
            if keys.is_equi() {
                let mut index: HashMap<Tuple, Vec<(&Tuple, u64)>> = HashMap::new();
                for (t, n) in r.iter() {
                    index.entry(keys.right_key(t)).or_default().push((t, n));
                }
                for (lt, ln) in l.iter() {
                    if let Some(matches) = index.get(&keys.left_key(lt)) {
                        for (rt, rn) in matches {
                            let joined = lt.concat(rt);
                            if keys.residual_holds(&joined)? {
                                rows.push((joined, ln * rn));
                            }
                        }
                    }
                }
            } else {
                for (lt, ln) in l.iter() {
                    for (rt, rn) in r.iter() {
                        if let Some(joined) = keys.matches(lt, rt)? {
                            rows.push((joined, ln * rn));
                        }
                    }
                }
            }
            Ok(BagRelation::from_counts(schema, rows))
        }
        BoundNode::Aggregate {
            group_by,
            aggregates,
            input,
        } => {
            let rel = eval_bound(input, db)?;
            let mut groups: IndexMap<Tuple, Vec<(&Tuple, u64)>> = IndexMap::new();
            for (t, n) in rel.iter() {
                groups.entry(t.project(group_by)).or_default().push((t, n));
            }
            let mut rows = Vec::with_capacity(groups.len());
            for (key, members) in groups {
                let values = compute_aggregates(aggregates, members.into_iter())?;
                let mut out = key.0;
                out.extend(values);
                rows.push((Tuple::new(out), 1));
            }
            Ok(BagRelation::from_consolidated(schema, rows))
        }
        BoundNode::TopK { k, order_by, input } => {
            let rel = eval_bound(input, db)?;
            let mut rows = rel.into_rows();
            rows.sort_by(|a, b| order_then_tuple(order_by, &a.0, &b.0));
            Ok(BagRelation::from_consolidated(schema, take_top_k(rows, *k)))
        }
        BoundNode::Merge { .. } => Err(Error::InvalidPlan(
            "merge can only be evaluated over annotated data".into(),
        )),
    }
}

/// Order-by keys first, then the whole tuple for deterministic ties.
pub fn order_then_tuple(keys: &[BoundSort], a: &Tuple, b: &Tuple) -> Ordering {
    compare_by(keys, a, b).then_with(|| a.cmp(b))
}

/// Keeps the first `k` tuples counting multiplicities, splitting the last.
pub fn take_top_k<T>(rows: impl IntoIterator<Item = (T, u64)>, k: u64) -> Vec<(T, u64)> {
    let mut out = Vec::new();
    let mut pos = 0u64;
    for (t, n) in rows {
        if pos >= k {
            break;
        }
        let m = n.min(k - pos);
        pos += m;
        out.push((t, m));
    }
    out
}

/// Computes aggregate values over a non-empty group.
pub fn compute_aggregates<'a>(
    aggregates: &[BoundAgg],
    members: impl Iterator<Item = (&'a Tuple, u64)> + Clone,
) -> Result<Vec<Value>> {
    aggregates
        .iter()
        .map(|a| aggregate_one(*a, members.clone()))
        .collect()
}

fn aggregate_one<'a>(agg: BoundAgg, members: impl Iterator<Item = (&'a Tuple, u64)>) -> Result<Value> {
    let mut cnt: u64 = 0;
    let mut sum: Option<Value> = None;
    let mut best: Option<&Value> = None;
    for (t, n) in members {
        let v = t.get(agg.arg);
        cnt += n;
        match agg.func {
            AggFn::Sum | AggFn::Avg => {
                let term = scale(v, n)?;
                sum = Some(match sum {
                    None => term,
                    Some(s) => s.checked_add(&term)?,
                });
            }
            AggFn::Min => {
                if best.is_none_or(|b| v < b) {
                    best = Some(v);
                }
            }
            AggFn::Max => {
                if best.is_none_or(|b| v > b) {
                    best = Some(v);
                }
            }
            AggFn::Count => {}
        }
    }
    match agg.func {
        AggFn::Count => Ok(Value::I64(count_value(cnt)?)),
        AggFn::Sum => sum.ok_or_else(empty_group),
        AggFn::Avg => Ok(average(&sum.ok_or_else(empty_group)?, cnt)),
        AggFn::Min | AggFn::Max => best.cloned().ok_or_else(empty_group),
    }
}

fn empty_group() -> Error {
    Error::InvalidPlan("aggregate over an empty group".into())
}

/// `v * n` with overflow checks for integers.
pub fn scale(v: &Value, n: u64) -> Result<Value> {
    match v {
        Value::I64(x) => i64::try_from(n)
            .ok()
            .and_then(|n| x.checked_mul(n))
            .map(Value::I64)
            .ok_or_else(|| Error::Overflow(format!("{x} * {n}"))),
        Value::F64(x) => Ok(Value::float(x * n as f64)),
        Value::Str(_) => Err(Error::TypeMismatch("arithmetic on a string".into())),
    }
}

pub fn count_value(cnt: u64) -> Result<i64> {
    i64::try_from(cnt).map_err(|_| Error::Overflow(format!("count {cnt}")))
}

/// `sum / cnt` as a float.
pub fn average(sum: &Value, cnt: u64) -> Value {
    Value::float(sum.as_f64().unwrap_or(f64::NAN) / cnt as f64)
}

/// The additive identity for a kind.
pub fn zero(kind: Kind) -> Value {
    match kind {
        Kind::F64 => Value::float(0.0),
        _ => Value::I64(0),
    }
}
