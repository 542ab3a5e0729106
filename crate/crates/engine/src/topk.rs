//! Top-k state: annotated tuples ordered by the sort keys.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use indexmap::IndexMap;
use sketchd_core::bind::BoundSort;
use sketchd_core::{AnnotatedDeltaTuple, AnnotatedTuple, Sketch, Tag, Tuple, Value};

use crate::error::{EngineError, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum SortValue {
    Asc(Value),
    Desc(Reverse<Value>),
}

pub(crate) type OrderKey = Vec<SortValue>;
pub(crate) type Entry = (Tuple, Sketch);

/// Order-by key, then tuple, then sketch. When bounded to `cap` positions,
/// the state holds every annotated tuple ordered strictly before `boundary`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TopKNode {
    pub k: u64,
    pub order_by: Vec<BoundSort>,
    pub cap: Option<u64>,
    pub entries: BTreeMap<OrderKey, BTreeMap<Entry, u64>>,
    pub total: u64,
    pub boundary: Option<(OrderKey, Entry)>,
}

impl TopKNode {
    pub fn new(k: u64, order_by: Vec<BoundSort>, cap: Option<u64>) -> Self {
        TopKNode {
            k,
            order_by,
            cap,
            entries: BTreeMap::new(),
            total: 0,
            boundary: None,
        }
    }

    pub fn order_key(&self, t: &Tuple) -> OrderKey {
        self.order_by
            .iter()
            .map(|s| {
                let v = t.get(s.col).clone();
                if s.desc {
                    SortValue::Desc(Reverse(v))
                } else {
                    SortValue::Asc(v)
                }
            })
            .collect()
    }

    fn tracked(&self, key: &OrderKey, e: &Entry) -> bool {
        match &self.boundary {
            None => true,
            Some((bk, be)) => (key, e) < (bk, be),
        }
    }

    fn trim(&mut self) {
        let Some(cap) = self.cap else { return };
        loop {
            let Some(mut last) = self.entries.last_entry() else { return };
            let inner = last.get_mut();
            let (e, n) = inner.last_key_value().map(|(e, n)| (e.clone(), *n)).expect("non-empty inner map");
            if self.total - n < cap {
                return;
            }
            inner.remove(&e);
            if inner.is_empty() {
                let key = last.remove_entry().0;
                self.boundary = Some((key, e));
            } else {
                self.boundary = Some((last.key().clone(), e));
            }
            self.total -= n;
        }
    }

    pub fn insert(&mut self, tuple: Tuple, sketch: Sketch, n: u64) {
        let key = self.order_key(&tuple);
        let e = (tuple, sketch);
        if !self.tracked(&key, &e) {
            return;
        }
        *self.entries.entry(key).or_default().entry(e).or_default() += n;
        self.total += n;
        self.trim();
    }

    pub fn remove(&mut self, tuple: Tuple, sketch: Sketch, n: u64) -> Result<()> {
        let key = self.order_key(&tuple);
        let e = (tuple, sketch);
        if !self.tracked(&key, &e) {
            return Ok(());
        }
        let inner = self.entries.get_mut(&key);
        let Some(c) = inner.and_then(|m| m.get_mut(&e)).filter(|c| **c >= n) else {
            return Err(EngineError::InconsistentDelta(format!(
                "deleting {} more often than it occurs in a top-k input",
                e.0
            )));
        };
        *c -= n;
        if *c == 0 {
            let inner = self.entries.get_mut(&key).expect("present");
            inner.remove(&e);
            if inner.is_empty() {
                self.entries.remove(&key);
            }
        }
        self.total -= n;
        Ok(())
    }

    /// The first `k` positions, splitting the last entry.
    pub fn top(&self) -> Vec<(Entry, u64)> {
        let mut out = Vec::new();
        let mut pos = 0;
        'outer: for inner in self.entries.values() {
            for (e, &n) in inner {
                if pos >= self.k {
                    break 'outer;
                }
                let m = n.min(self.k - pos);
                pos += m;
                out.push((e.clone(), m));
            }
        }
        out
    }

    pub fn output(&self) -> Vec<AnnotatedTuple> {
        self.top()
            .into_iter()
            .map(|((tuple, sketch), multiplicity)| AnnotatedTuple {
                tuple,
                sketch,
                multiplicity,
            })
            .collect()
    }

    fn check_buffer(&self) -> Result<()> {
        if self.boundary.is_some() && self.total < self.k {
            return Err(EngineError::RecaptureRequired(format!(
                "top-k buffer holds {} of {} positions",
                self.total, self.k
            )));
        }
        Ok(())
    }

    pub fn process(&mut self, input: &[AnnotatedDeltaTuple]) -> Result<Vec<AnnotatedDeltaTuple>> {
        if input.is_empty() {
            return Ok(Vec::new());
        }
        let mut net: IndexMap<(&Tuple, &Sketch), i64> = IndexMap::new();
        for d in input {
            *net.entry((&d.tuple, &d.sketch)).or_default() += d.signed();
        }
        let old = self.top();
        for (&(t, s), &n) in net.iter().filter(|(_, n)| **n < 0) {
            self.remove(t.clone(), s.clone(), n.unsigned_abs())?;
        }
        for (&(t, s), &n) in net.iter().filter(|(_, n)| **n > 0) {
            self.insert(t.clone(), s.clone(), n as u64);
        }
        self.check_buffer()?;
        let new = self.top();
        let mut diff: IndexMap<Entry, i64> = IndexMap::new();
        for (e, n) in old {
            *diff.entry(e).or_default() -= n as i64;
        }
        for (e, n) in new {
            *diff.entry(e).or_default() += n as i64;
        }
        let (mut deletes, mut inserts) = (Vec::new(), Vec::new());
        for ((tuple, sketch), n) in diff {
            match n.cmp(&0) {
                std::cmp::Ordering::Less => {
                    deletes.push(AnnotatedDeltaTuple::new(Tag::Delete, tuple, sketch, n.unsigned_abs()))
                }
                std::cmp::Ordering::Greater => {
                    inserts.push(AnnotatedDeltaTuple::new(Tag::Insert, tuple, sketch, n as u64))
                }
                std::cmp::Ordering::Equal => {}
            }
        }
        deletes.extend(inserts);
        Ok(deletes)
    }
}
