//! Group-by aggregation state.

use std::collections::{BTreeMap, HashMap};

use indexmap::IndexMap;
use sketchd_core::bind::BoundAgg;
use sketchd_core::eval::{average, count_value, scale};
use sketchd_core::{AggFn, AnnotatedDeltaTuple, AnnotatedTuple, FragmentId, Sketch, Tag, Tuple, Value};

use crate::error::{EngineError, Result};

/// The values of a min or max aggregate in sort order. When bounded, only the
/// best `cap` distinct values are kept; every value strictly better than
/// `boundary` is then stored with its exact multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Extremes {
    pub max: bool,
    pub cap: Option<usize>,
    pub values: BTreeMap<Value, u64>,
    pub boundary: Option<Value>,
}

impl Extremes {
    pub fn new(max: bool, cap: Option<usize>) -> Self {
        Extremes {
            max,
            cap,
            values: BTreeMap::new(),
            boundary: None,
        }
    }

    fn better(&self, a: &Value, b: &Value) -> bool {
        if self.max {
            a > b
        } else {
            a < b
        }
    }

    /// Whether `v` is in the exactly tracked range.
    fn tracked(&self, v: &Value) -> bool {
        self.boundary.as_ref().is_none_or(|b| self.better(v, b))
    }

    fn trim(&mut self) {
        let Some(cap) = self.cap else { return };
        while self.values.len() > cap {
            let worst = if self.max {
                self.values.pop_first()
            } else {
                self.values.pop_last()
            };
            self.boundary = worst.map(|(v, _)| v);
        }
    }

    pub fn insert(&mut self, v: &Value, n: u64) {
        if !self.tracked(v) {
            return;
        }
        *self.values.entry(v.clone()).or_default() += n;
        self.trim();
    }

    pub fn remove(&mut self, v: &Value, n: u64) -> Result<()> {
        if !self.tracked(v) {
            return Ok(());
        }
        match self.values.get_mut(v) {
            Some(c) if *c > n => *c -= n,
            Some(c) if *c == n => {
                self.values.remove(v);
            }
            _ => {
                return Err(EngineError::InconsistentDelta(format!(
                    "deleting {v} more often than it occurs"
                )))
            }
        }
        Ok(())
    }

    pub fn best(&self) -> Result<Value> {
        let best = if self.max {
            self.values.last_key_value()
        } else {
            self.values.first_key_value()
        };
        match best {
            Some((v, _)) => Ok(v.clone()),
            None if self.boundary.is_some() => Err(EngineError::RecaptureRequired(format!(
                "every buffered {} value was deleted",
                if self.max { "max" } else { "min" }
            ))),
            None => Err(EngineError::InconsistentDelta("min/max over an empty group".into())),
        }
    }

    pub fn merge(&mut self, other: Extremes) {
        let boundary = match (self.boundary.take(), other.boundary) {
            (Some(a), Some(b)) => Some(if self.better(&a, &b) { a } else { b }),
            (a, b) => a.or(b),
        };
        for (v, n) in other.values {
            *self.values.entry(v).or_default() += n;
        }
        self.boundary = boundary;
        if let Some(b) = self.boundary.clone() {
            let max = self.max;
            self.values.retain(|v, _| if max { *v > b } else { *v < b });
        }
        self.trim();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Acc {
    Sum(Option<Value>),
    Count,
    Avg(Option<Value>),
    Extreme(Extremes),
}

impl Acc {
    fn new(func: AggFn, cap: Option<usize>) -> Self {
        match func {
            AggFn::Sum => Acc::Sum(None),
            AggFn::Count => Acc::Count,
            AggFn::Avg => Acc::Avg(None),
            AggFn::Min => Acc::Extreme(Extremes::new(false, cap)),
            AggFn::Max => Acc::Extreme(Extremes::new(true, cap)),
        }
    }
}

fn add_to(sum: &mut Option<Value>, term: Value) -> Result<()> {
    *sum = Some(match sum.take() {
        None => term,
        Some(s) => s.checked_add(&term)?,
    });
    Ok(())
}

fn sub_from(sum: &mut Option<Value>, term: Value) -> Result<()> {
    match sum {
        Some(s) => *s = s.checked_sub(&term)?,
        None => return Err(EngineError::InconsistentDelta("deleting from an empty group".into())),
    }
    Ok(())
}

/// State of one group.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Group {
    pub cnt: u64,
    pub accs: Vec<Acc>,
    pub frags: BTreeMap<u32, u64>,
}

/// Output of a group together with what no-op suppression compares.
#[derive(Debug, Clone, PartialEq)]
struct Emitted {
    tuple: Tuple,
    sketch: Sketch,
    exact: Vec<(Option<Value>, u64)>,
}

impl Group {
    pub fn new(aggs: &[BoundAgg], cap: Option<usize>) -> Self {
        Group {
            cnt: 0,
            accs: aggs.iter().map(|a| Acc::new(a.func, cap)).collect(),
            frags: BTreeMap::new(),
        }
    }

    /// Adds `n` copies of a row whose aggregate arguments are `args`.
    pub fn add(&mut self, args: impl Iterator<Item = Value>, frags: impl Iterator<Item = FragmentId>, n: u64) -> Result<()> {
        self.cnt += n;
        for f in frags {
            *self.frags.entry(f.0).or_default() += n;
        }
        for (acc, v) in self.accs.iter_mut().zip(args) {
            match acc {
                Acc::Sum(s) | Acc::Avg(s) => add_to(s, scale(&v, n)?)?,
                Acc::Count => {}
                Acc::Extreme(e) => e.insert(&v, n),
            }
        }
        Ok(())
    }

    pub fn remove(&mut self, args: impl Iterator<Item = Value>, frags: impl Iterator<Item = FragmentId>, n: u64) -> Result<()> {
        self.cnt = self
            .cnt
            .checked_sub(n)
            .ok_or_else(|| EngineError::InconsistentDelta("group count below zero".into()))?;
        for f in frags {
            match self.frags.get_mut(&f.0) {
                Some(c) if *c > n => *c -= n,
                Some(c) if *c == n => {
                    self.frags.remove(&f.0);
                }
                _ => {
                    return Err(EngineError::InconsistentDelta(format!(
                        "fragment {f} count below zero in a group"
                    )))
                }
            }
        }
        for (acc, v) in self.accs.iter_mut().zip(args) {
            match acc {
                Acc::Sum(s) | Acc::Avg(s) => sub_from(s, scale(&v, n)?)?,
                Acc::Count => {}
                Acc::Extreme(e) => e.remove(&v, n)?,
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: Group) -> Result<()> {
        self.cnt += other.cnt;
        for (f, c) in other.frags {
            *self.frags.entry(f).or_default() += c;
        }
        for (a, b) in self.accs.iter_mut().zip(other.accs) {
            match (a, b) {
                (Acc::Sum(s), Acc::Sum(t)) | (Acc::Avg(s), Acc::Avg(t)) => {
                    if let Some(t) = t {
                        add_to(s, t)?;
                    }
                }
                (Acc::Extreme(e), Acc::Extreme(f)) => e.merge(f),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn sketch(&self, width: u32) -> Sketch {
        Sketch::from_ids(width, self.frags.keys().map(|&f| FragmentId(f)))
    }

    pub fn values(&self) -> Result<Vec<Value>> {
        self.accs
            .iter()
            .map(|a| match a {
                Acc::Count => Ok(Value::I64(count_value(self.cnt)?)),
                Acc::Sum(s) => s
                    .clone()
                    .ok_or_else(|| EngineError::InconsistentDelta("sum over an empty group".into())),
                Acc::Avg(s) => s
                    .as_ref()
                    .map(|s| average(s, self.cnt))
                    .ok_or_else(|| EngineError::InconsistentDelta("avg over an empty group".into())),
                Acc::Extreme(e) => e.best(),
            })
            .collect()
    }

    fn output(&self, key: &Tuple, width: u32) -> Result<Emitted> {
        let mut values = key.0.clone();
        values.extend(self.values()?);
        let exact = self
            .accs
            .iter()
            .filter_map(|a| match a {
                Acc::Avg(s) => Some((s.clone(), self.cnt)),
                _ => None,
            })
            .collect();
        Ok(Emitted {
            tuple: Tuple::new(values),
            sketch: self.sketch(width),
            exact,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AggNode {
    pub group_by: Vec<usize>,
    pub aggs: Vec<BoundAgg>,
    pub minmax: Option<usize>,
    pub width: u32,
    pub groups: HashMap<Tuple, Group>,
}

impl AggNode {
    pub fn new(group_by: Vec<usize>, aggs: Vec<BoundAgg>, minmax: Option<usize>, width: u32) -> Self {
        AggNode {
            group_by,
            aggs,
            minmax,
            width,
            groups: HashMap::new(),
        }
    }

    pub fn empty_group(&self) -> Group {
        Group::new(&self.aggs, self.minmax)
    }

    fn args<'a>(&'a self, t: &'a Tuple) -> impl Iterator<Item = Value> + 'a {
        self.aggs.iter().map(move |a| t.get(a.arg).clone())
    }

    /// Adds input rows while building the initial state.
    pub fn absorb(&mut self, rows: &[AnnotatedTuple]) -> Result<()> {
        for r in rows {
            let key = r.tuple.project(&self.group_by);
            let mut g = self.groups.remove(&key).unwrap_or_else(|| self.empty_group());
            g.add(self.args(&r.tuple), r.sketch.iter(), r.multiplicity)?;
            self.groups.insert(key, g);
        }
        Ok(())
    }

    /// Current output, one row per group.
    pub fn output(&self) -> Result<Vec<AnnotatedTuple>> {
        self.groups
            .iter()
            .map(|(k, g)| {
                let e = g.output(k, self.width)?;
                Ok(AnnotatedTuple {
                    tuple: e.tuple,
                    sketch: e.sketch,
                    multiplicity: 1,
                })
            })
            .collect()
    }

    /// Applies an input delta, emitting at most one delete/insert pair per group.
    pub fn process(&mut self, input: &[AnnotatedDeltaTuple]) -> Result<Vec<AnnotatedDeltaTuple>> {
        let mut by_group: IndexMap<Tuple, IndexMap<(&Tuple, &Sketch), i64>> = IndexMap::new();
        for d in input {
            *by_group
                .entry(d.tuple.project(&self.group_by))
                .or_default()
                .entry((&d.tuple, &d.sketch))
                .or_default() += d.signed();
        }
        let mut out = Vec::new();
        for (key, rows) in by_group {
            let old = match self.groups.get(&key) {
                Some(g) => Some(g.output(&key, self.width)?),
                None => None,
            };
            let mut g = self.groups.remove(&key).unwrap_or_else(|| self.empty_group());
            for (&(t, s), &n) in rows.iter().filter(|(_, n)| **n < 0) {
                g.remove(self.args(t), s.iter(), n.unsigned_abs())?;
            }
            for (&(t, s), &n) in rows.iter().filter(|(_, n)| **n > 0) {
                g.add(self.args(t), s.iter(), n as u64)?;
            }
            let new = if g.cnt == 0 {
                if !g.frags.is_empty() {
                    return Err(EngineError::InconsistentDelta(
                        "fragment counts left in an empty group".into(),
                    ));
                }
                None
            } else {
                let e = g.output(&key, self.width)?;
                self.groups.insert(key, g);
                Some(e)
            };
            if old == new {
                continue;
            }
            if let Some(o) = old {
                out.push(AnnotatedDeltaTuple::new(Tag::Delete, o.tuple, o.sketch, 1));
            }
            if let Some(n) = new {
                out.push(AnnotatedDeltaTuple::new(Tag::Insert, n.tuple, n.sketch, 1));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_min_keeps_the_smallest_values() {
        let mut e = Extremes::new(false, Some(2));
        for v in [5, 3, 9, 1] {
            e.insert(&Value::I64(v), 1);
        }
        assert_eq!(e.values.keys().cloned().collect::<Vec<_>>(), vec![Value::I64(1), Value::I64(3)]);
        assert_eq!(e.boundary, Some(Value::I64(5)));
        e.insert(&Value::I64(7), 1);
        assert_eq!(e.values.len(), 2);
        e.remove(&Value::I64(9), 1).unwrap();
        e.remove(&Value::I64(1), 1).unwrap();
        assert_eq!(e.best().unwrap(), Value::I64(3));
        e.remove(&Value::I64(3), 1).unwrap();
        assert!(matches!(e.best(), Err(EngineError::RecaptureRequired(_))));
    }

    #[test]
    fn merging_bounded_buffers_keeps_exactness() {
        let mut a = Extremes::new(true, Some(2));
        let mut b = Extremes::new(true, Some(2));
        for v in [1, 2, 3] {
            a.insert(&Value::I64(v), 1);
        }
        for v in [10, 0] {
            b.insert(&Value::I64(v), 1);
        }
        a.merge(b);
        assert_eq!(a.values.keys().cloned().collect::<Vec<_>>(), vec![Value::I64(3), Value::I64(10)]);
        assert_eq!(a.boundary, Some(Value::I64(2)));
    }
}
