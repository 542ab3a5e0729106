//! Sketch-annotated relations and deltas, and annotated evaluation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::bind::{compare_by, BoundNode, BoundPlan, BoundSort};
use crate::error::{Error, Result};
use crate::eval::{compute_aggregates, take_top_k};
use crate::exec;
use crate::partition::{annotate, annotate_delta, PartitionCatalog};
use crate::plan::QueryPlan;
use crate::relation::{BagRelation, Database, DeltaDatabase, DeltaRelation, DeltaTuple, Schema, Tag};
use crate::sketch::Sketch;
use crate::value::Tuple;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatedTuple {
    pub tuple: Tuple,
    pub sketch: Sketch,
    pub multiplicity: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatedDeltaTuple {
    pub tag: Tag,
    pub tuple: Tuple,
    pub sketch: Sketch,
    pub multiplicity: u64,
}

impl AnnotatedDeltaTuple {
    pub fn new(tag: Tag, tuple: Tuple, sketch: Sketch, multiplicity: u64) -> Self {
        AnnotatedDeltaTuple {
            tag,
            tuple,
            sketch,
            multiplicity,
        }
    }

    pub fn signed(&self) -> i64 {
        self.tag.sign() * self.multiplicity as i64
    }
}

/// A bag of annotated tuples. Rows are not necessarily consolidated.
#[derive(Debug, Clone)]
pub struct AnnotatedRelation {
    schema: Arc<Schema>,
    rows: Vec<AnnotatedTuple>,
}

impl AnnotatedRelation {
    pub fn new(schema: Arc<Schema>, rows: Vec<AnnotatedTuple>) -> Self {
        AnnotatedRelation {
            schema,
            rows: rows.into_iter().filter(|r| r.multiplicity > 0).collect(),
        }
    }

    pub fn empty(schema: Arc<Schema>) -> Self {
        Self::new(schema, Vec::new())
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn rows(&self) -> &[AnnotatedTuple] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<AnnotatedTuple> {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Per `(tuple, sketch)` multiplicities.
    pub fn counts(&self) -> IndexMap<(Tuple, Sketch), u64> {
        let mut m: IndexMap<(Tuple, Sketch), u64> = IndexMap::new();
        for r in &self.rows {
            *m.entry((r.tuple.clone(), r.sketch.clone())).or_insert(0) += r.multiplicity;
        }
        m
    }

    /// One row per distinct `(tuple, sketch)` pair.
    pub fn consolidated(&self) -> AnnotatedRelation {
        AnnotatedRelation {
            schema: self.schema.clone(),
            rows: self
                .counts()
                .into_iter()
                .map(|((tuple, sketch), multiplicity)| AnnotatedTuple {
                    tuple,
                    sketch,
                    multiplicity,
                })
                .collect(),
        }
    }

    /// Sorted `(tuple, sketch, multiplicity)` triples; handy in assertions.
    pub fn sorted(&self) -> Vec<(Tuple, Sketch, u64)> {
        let mut v: Vec<_> = self
            .counts()
            .into_iter()
            .map(|((t, s), n)| (t, s, n))
            .collect();
        v.sort();
        v
    }
}

/// Multiset equality over `(tuple, sketch)` pairs.
impl PartialEq for AnnotatedRelation {
    fn eq(&self, other: &Self) -> bool {
        self.schema.same_shape(&other.schema) && self.sorted() == other.sorted()
    }
}

/// A tagged bag of annotated tuples.
#[derive(Debug, Clone)]
pub struct AnnotatedDelta {
    schema: Arc<Schema>,
    rows: Vec<AnnotatedDeltaTuple>,
}

impl AnnotatedDelta {
    pub fn new(schema: Arc<Schema>, rows: Vec<AnnotatedDeltaTuple>) -> Self {
        AnnotatedDelta {
            schema,
            rows: rows.into_iter().filter(|r| r.multiplicity > 0).collect(),
        }
    }

    pub fn empty(schema: Arc<Schema>) -> Self {
        Self::new(schema, Vec::new())
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn rows(&self) -> &[AnnotatedDeltaTuple] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<AnnotatedDeltaTuple> {
        self.rows
    }

    pub fn push(&mut self, row: AnnotatedDeltaTuple) {
        if row.multiplicity > 0 {
            self.rows.push(row);
        }
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = AnnotatedDeltaTuple>) {
        for r in rows {
            self.push(r);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Total delta tuples counting multiplicities.
    pub fn size(&self) -> u64 {
        self.rows.iter().map(|r| r.multiplicity).sum()
    }

    /// Signed net change per `(tuple, sketch)`, zero entries dropped.
    pub fn net_counts(&self) -> IndexMap<(Tuple, Sketch), i64> {
        let mut m: IndexMap<(Tuple, Sketch), i64> = IndexMap::new();
        for r in &self.rows {
            *m.entry((r.tuple.clone(), r.sketch.clone())).or_insert(0) += r.signed();
        }
        m.retain(|_, n| *n != 0);
        m
    }
}

/// Annotated relations for the partitioned relations of a database.
#[derive(Debug, Clone, Default)]
pub struct AnnotatedDatabase {
    relations: BTreeMap<String, AnnotatedRelation>,
}

impl AnnotatedDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Annotates every relation the catalog partitions.
    pub fn annotate(db: &Database, catalog: &PartitionCatalog) -> Result<Self> {
        let mut out = Self::new();
        for rel in db.relations() {
            if catalog.contains(&rel.schema().name) {
                out.insert(annotate(rel, catalog)?);
            }
        }
        Ok(out)
    }

    pub fn insert(&mut self, rel: AnnotatedRelation) {
        self.relations.insert(rel.schema().name.clone(), rel);
    }

    pub fn with(mut self, rel: AnnotatedRelation) -> Self {
        self.insert(rel);
        self
    }

    pub fn get(&self, name: &str) -> Result<&AnnotatedRelation> {
        self.relations
            .get(name)
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    pub fn relations(&self) -> impl Iterator<Item = &AnnotatedRelation> {
        self.relations.values()
    }
}

impl crate::plan::SchemaLookup for AnnotatedDatabase {
    fn schema_of(&self, relation: &str) -> Result<Arc<Schema>> {
        self.get(relation).map(|r| r.schema().clone())
    }
}

/// Annotated deltas keyed by relation.
#[derive(Debug, Clone, Default)]
pub struct AnnotatedDeltaDatabase {
    relations: BTreeMap<String, AnnotatedDelta>,
}

impl AnnotatedDeltaDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Annotates the deltas of every partitioned relation.
    pub fn annotate(delta: &DeltaDatabase, catalog: &PartitionCatalog) -> Result<Self> {
        let mut out = Self::new();
        for d in delta.relations() {
            if catalog.contains(&d.schema().name) {
                out.insert(annotate_delta(d, catalog)?);
            }
        }
        Ok(out)
    }

    pub fn insert(&mut self, delta: AnnotatedDelta) {
        self.relations.insert(delta.schema().name.clone(), delta);
    }

    pub fn with(mut self, delta: AnnotatedDelta) -> Self {
        self.insert(delta);
        self
    }

    pub fn get(&self, name: &str) -> Option<&AnnotatedDelta> {
        self.relations.get(name)
    }

    pub fn relations(&self) -> impl Iterator<Item = &AnnotatedDelta> {
        self.relations.values()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.values().all(AnnotatedDelta::is_empty)
    }

    pub fn size(&self) -> u64 {
        self.relations.values().map(AnnotatedDelta::size).sum()
    }
}

/// Drops sketches from an annotated relation.
pub fn tuples_in(rel: &AnnotatedRelation) -> BagRelation {
    BagRelation::from_counts(
        rel.schema.clone(),
        rel.rows.iter().map(|r| (r.tuple.clone(), r.multiplicity)),
    )
}

/// Drops sketches from an annotated delta, keeping tags.
pub fn delta_tuples_in(delta: &AnnotatedDelta) -> DeltaRelation {
    DeltaRelation::new(
        delta.schema.clone(),
        delta
            .rows
            .iter()
            .map(|r| DeltaTuple {
                tag: r.tag,
                tuple: r.tuple.clone(),
                multiplicity: r.multiplicity,
            })
            .collect(),
    )
}

/// The bag of sketches of an annotated relation.
pub fn frags_in(rel: &AnnotatedRelation) -> Vec<(Sketch, u64)> {
    let mut m: BTreeMap<Sketch, u64> = BTreeMap::new();
    for r in &rel.rows {
        *m.entry(r.sketch.clone()).or_insert(0) += r.multiplicity;
    }
    m.into_iter().collect()
}

/// The tagged bag of sketches of an annotated delta.
pub fn delta_frags_in(delta: &AnnotatedDelta) -> Vec<(Tag, Sketch, u64)> {
    let mut m: BTreeMap<(Tag, Sketch), u64> = BTreeMap::new();
    for r in &delta.rows {
        *m.entry((r.tag, r.sketch.clone())).or_insert(0) += r.multiplicity;
    }
    m.into_iter().map(|((t, s), n)| (t, s, n)).collect()
}

/// Union of all sketches with positive multiplicity.
pub fn frag_set(rel: &AnnotatedRelation, width: u32) -> Sketch {
    let mut out = Sketch::empty(width);
    for r in &rel.rows {
        out.union_with(&r.sketch);
    }
    out
}

/// `ℛ ⊎ Δℛ` over `(tuple, sketch)` pairs.
pub fn apply_annotated_delta(rel: &AnnotatedRelation, delta: &AnnotatedDelta) -> Result<AnnotatedRelation> {
    let mut counts = rel.counts();
    for ((tuple, sketch), n) in delta.net_counts() {
        let key = (tuple, sketch);
        let current = counts.get(&key).copied().unwrap_or(0);
        let updated = current as i64 + n;
        if updated < 0 {
            return Err(Error::IllFormedDelta(format!(
                "deleting {} copies of {} {} but only {current} exist",
                -n, key.0, key.1
            )));
        }
        if updated == 0 {
            counts.shift_remove(&key);
        } else {
            counts.insert(key, updated as u64);
        }
    }
    Ok(AnnotatedRelation {
        schema: rel.schema.clone(),
        rows: counts
            .into_iter()
            .map(|((tuple, sketch), multiplicity)| AnnotatedTuple {
                tuple,
                sketch,
                multiplicity,
            })
            .collect(),
    })
}

/// Result of annotated evaluation: a relation, or a sketch for merge roots.
#[derive(Debug, Clone, PartialEq)]
pub enum AnnotatedOutput {
    Relation(AnnotatedRelation),
    Sketch(Sketch),
}

impl AnnotatedOutput {
    pub fn into_sketch(self) -> Option<Sketch> {
        match self {
            AnnotatedOutput::Sketch(s) => Some(s),
            AnnotatedOutput::Relation(_) => None,
        }
    }

    pub fn into_relation(self) -> Option<AnnotatedRelation> {
        match self {
            AnnotatedOutput::Relation(r) => Some(r),
            AnnotatedOutput::Sketch(_) => None,
        }
    }
}

/// Evaluates a plan over annotated data. Each result tuple carries the
/// union of the sketches of the inputs it was derived from.
pub fn eval_annotated(plan: &QueryPlan, adb: &AnnotatedDatabase, width: u32) -> Result<AnnotatedOutput> {
    let bound = BoundPlan::bind(plan, adb)?;
    match &bound.node {
        BoundNode::Merge { input } => {
            let rel = eval_annotated_bound(input, adb, width)?;
            Ok(AnnotatedOutput::Sketch(frag_set(&rel, width)))
        }
        _ => Ok(AnnotatedOutput::Relation(eval_annotated_bound(&bound, adb, width)?)),
    }
}

/// The accurate sketch of a merge-rooted plan over a plain database.
pub fn capture(plan: &QueryPlan, db: &Database, catalog: &PartitionCatalog) -> Result<Sketch> {
    let adb = AnnotatedDatabase::annotate(db, catalog)?;
    match eval_annotated(plan, &adb, catalog.width())? {
        AnnotatedOutput::Sketch(s) => Ok(s),
        AnnotatedOutput::Relation(rel) => Ok(frag_set(&rel, catalog.width())),
    }
}

pub fn eval_annotated_bound(plan: &BoundPlan, adb: &AnnotatedDatabase, width: u32) -> Result<AnnotatedRelation> {
    let schema = plan.schema.clone();
    match &plan.node {
        BoundNode::Scan { relation } => {
            let rel = adb.get(relation)?;
            Ok(AnnotatedRelation::new(schema, rel.rows().to_vec()))
        }
        BoundNode::Select { predicate, input } => {
            let rel = eval_annotated_bound(input, adb, width)?;
            let keep = exec::try_map(rel.rows(), |r| predicate.eval(&r.tuple))?;
            let rows = rel
                .into_rows()
                .into_iter()
                .zip(keep)
                .filter_map(|(r, k)| k.then_some(r))
                .collect();
            Ok(AnnotatedRelation::new(schema, rows))
        }
        BoundNode::Project { exprs, input } => {
            let rel = eval_annotated_bound(input, adb, width)?;
            let rows = exec::try_map(rel.rows(), |r| {
                let values = exprs.iter().map(|e| e.eval(&r.tuple)).collect::<Result<Vec<_>>>()?;
                Ok(AnnotatedTuple {
                    tuple: Tuple::new(values),
                    sketch: r.sketch.clone(),
                    multiplicity: r.multiplicity,
                })
            })?;
            Ok(AnnotatedRelation::new(schema, rows))
        }
        BoundNode::Join { keys, left, right } => {
            let l = eval_annotated_bound(left, adb, width)?;
            let r = eval_annotated_bound(right, adb, width)?;
            let mut rows = Vec::new();
            let mut emit = |a: &AnnotatedTuple, b: &AnnotatedTuple, joined: Tuple| {
                rows.push(AnnotatedTuple {
                    tuple: joined,
                    sketch: a.sketch.union(&b.sketch),
                    multiplicity: a.multiplicity * b.multiplicity,
                });
            };
            if keys.is_equi() {
                let mut index: HashMap<Tuple, Vec<&AnnotatedTuple>> = HashMap::new();
                for b in r.rows() {
                    index.entry(keys.right_key(&b.tuple)).or_default().push(b);
                }
                for a in l.rows() {
                    if let Some(ms) = index.get(&keys.left_key(&a.tuple)) {
                        for b in ms {
                            let joined = a.tuple.concat(&b.tuple);
                            if keys.residual_holds(&joined)? {
                                emit(a, b, joined);
                            }
                        }
                    }
                }
            } else {
                for a in l.rows() {
                    for b in r.rows() {
                        if let Some(joined) = keys.matches(&a.tuple, &b.tuple)? {
                            emit(a, b, joined);
                        }
                    }
                }
            }
            Ok(AnnotatedRelation::new(schema, rows))
        }
        BoundNode::Aggregate {
            group_by,
            aggregates,
            input,
        } => {
            let rel = eval_annotated_bound(input, adb, width)?;
            let groups = group_rows(rel.rows(), group_by, width);
            let rows = exec::try_map(&groups, |(key, sketch, members)| {
                let values = compute_aggregates(
                    aggregates,
                    members.iter().map(|&i| {
                        let r = &rel.rows()[i];
                        (&r.tuple, r.multiplicity)
                    }),
                )?;
                let mut out = key.0.clone();
                out.extend(values);
                Ok(AnnotatedTuple {
                    tuple: Tuple::new(out),
                    sketch: sketch.clone(),
                    multiplicity: 1,
                })
            })?;
            Ok(AnnotatedRelation::new(schema, rows))
        }
        BoundNode::TopK { k, order_by, input } => {
            let rel = eval_annotated_bound(input, adb, width)?.consolidated();
            let mut rows: Vec<((Tuple, Sketch), u64)> = rel
                .into_rows()
                .into_iter()
                .map(|r| ((r.tuple, r.sketch), r.multiplicity))
                .collect();
            rows.sort_by(|a, b| annotated_order(order_by, &a.0, &b.0));
            let rows = take_top_k(rows, *k)
                .into_iter()
                .map(|((tuple, sketch), multiplicity)| AnnotatedTuple {
                    tuple,
                    sketch,
                    multiplicity,
                })
                .collect();
            Ok(AnnotatedRelation::new(schema, rows))
        }
        BoundNode::Merge { .. } => Err(Error::InvalidPlan("merge below the root".into())),
    }
}

/// Order of annotated tuples in a top-k: order-by keys, then tuple, then sketch.
pub fn annotated_order(keys: &[BoundSort], a: &(Tuple, Sketch), b: &(Tuple, Sketch)) -> Ordering {
    compare_by(keys, &a.0, &b.0)
        .then_with(|| a.0.cmp(&b.0))
        .then_with(|| a.1.cmp(&b.1))
}

/// Groups rows by key, with the union sketch and member row indices per group.
fn group_rows(rows: &[AnnotatedTuple], group_by: &[usize], width: u32) -> Vec<(Tuple, Sketch, Vec<usize>)> {
    let indices: Vec<usize> = (0..rows.len()).collect();
    let partials = exec::map_chunks(&indices, exec::chunk_len(rows.len()), |chunk| {
        let mut m: IndexMap<Tuple, (Sketch, Vec<usize>)> = IndexMap::new();
        for &i in chunk {
            let r = &rows[i];
            let e = m
                .entry(r.tuple.project(group_by))
                .or_insert_with(|| (Sketch::empty(width), Vec::new()));
            e.0.union_with(&r.sketch);
            e.1.push(i);
        }
        m
    });
    let mut merged: IndexMap<Tuple, (Sketch, Vec<usize>)> = IndexMap::new();
    for m in partials {
        for (k, (s, idx)) in m {
            let e = merged
                .entry(k)
                .or_insert_with(|| (Sketch::empty(width), Vec::new()));
            e.0.union_with(&s);
            e.1.extend(idx);
        }
    }
    merged.into_iter().map(|(k, (s, i))| (k, s, i)).collect()
}
