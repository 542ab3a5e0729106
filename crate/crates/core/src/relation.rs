//! Schemas, bag relations, deltas and databases.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::{Kind, Tuple};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: Kind,
}

impl Attribute {
    pub fn new(name: impl Into<String>, kind: Kind) -> Self {
        Attribute {
            name: name.into(),
            kind,
        }
    }
}

/// A named list of typed attributes with unique names.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Schema {
    pub name: String,
    pub attributes: Vec<Attribute>,
}

impl Schema {
    pub fn new(name: impl Into<String>, attributes: Vec<Attribute>) -> Result<Self> {
        let schema = Schema {
            name: name.into(),
            attributes,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Shorthand for tests and fixtures: `Schema::of("r", &[("a", Kind::I64)])`.
    pub fn of(name: &str, attrs: &[(&str, Kind)]) -> Self {
        Schema::new(
            name,
            attrs.iter().map(|(n, k)| Attribute::new(*n, *k)).collect(),
        )
        .expect("fixture schema has unique attribute names")
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for attr in &self.attributes {
            if !seen.insert(attr.name.as_str()) {
                return Err(Error::SchemaMismatch(format!(
                    "duplicate attribute {:?} in {:?}",
                    attr.name, self.name
                )));
            }
        }
        Ok(())
    }

    pub fn arity(&self) -> usize {
        self.attributes.len()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(format!("{name} in {}", self.name)))
    }

    pub fn kind_of(&self, idx: usize) -> Kind {
        self.attributes[idx].kind
    }

    /// Checks arity and per-position kinds of a tuple.
    pub fn check(&self, tuple: &Tuple) -> Result<()> {
        if tuple.arity() != self.arity() {
            return Err(Error::SchemaMismatch(format!(
                "tuple {tuple} has arity {} but {} has {}",
                tuple.arity(),
                self.name,
                self.arity()
            )));
        }
        for (value, attr) in tuple.values().iter().zip(&self.attributes) {
            if value.kind() != attr.kind {
                return Err(Error::TypeMismatch(format!(
                    "{}.{} expects {} got {}",
                    self.name,
                    attr.name,
                    attr.kind,
                    value.kind()
                )));
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Schema) -> bool {
        self.attributes == other.attributes
    }
}

/// Consolidates `(tuple, count)` pairs, keeping first-seen order.
pub(crate) fn consolidate(rows: impl IntoIterator<Item = (Tuple, u64)>) -> Vec<(Tuple, u64)> {
    let mut map: IndexMap<Tuple, u64> = IndexMap::new();
    for (t, n) in rows {
        if n > 0 {
            *map.entry(t).or_insert(0) += n;
        }
    }
    map.into_iter().collect()
}

/// A bag (multiset) of tuples. Each distinct tuple appears once with its
/// multiplicity, which is always at least 1.
#[derive(Debug, Clone)]
pub struct BagRelation {
    schema: Arc<Schema>,
    rows: Vec<(Tuple, u64)>,
}

impl BagRelation {
    pub fn empty(schema: Arc<Schema>) -> Self {
        BagRelation {
            schema,
            rows: Vec::new(),
        }
    }

    /// Builds a relation from possibly repeated `(tuple, multiplicity)` pairs.
    pub fn from_counts(
        schema: Arc<Schema>,
        rows: impl IntoIterator<Item = (Tuple, u64)>,
    ) -> Self {
        BagRelation {
            schema,
            rows: consolidate(rows),
        }
    }

    /// Builds a relation from rows listed once per occurrence.
    pub fn from_tuples(schema: Arc<Schema>, rows: impl IntoIterator<Item = Tuple>) -> Self {
        Self::from_counts(schema, rows.into_iter().map(|t| (t, 1)))
    }

    /// Wraps rows the caller guarantees are already consolidated.
    pub fn from_consolidated(schema: Arc<Schema>, rows: Vec<(Tuple, u64)>) -> Self {
        debug_assert!(rows.iter().all(|(_, n)| *n > 0));
        BagRelation { schema, rows }
    }

    /// Same as [`BagRelation::from_counts`] but validates tuples against the schema.
    pub fn checked(
        schema: Arc<Schema>,
        rows: impl IntoIterator<Item = (Tuple, u64)>,
    ) -> Result<Self> {
        let rel = Self::from_counts(schema, rows);
        for (t, _) in &rel.rows {
            rel.schema.check(t)?;
        }
        Ok(rel)
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn rows(&self) -> &[(Tuple, u64)] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<(Tuple, u64)> {
        self.rows
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tuple, u64)> {
        self.rows.iter().map(|(t, n)| (t, *n))
    }

    /// Number of distinct tuples.
    pub fn distinct_len(&self) -> usize {
        self.rows.len()
    }

    /// Total number of tuples counting multiplicities.
    pub fn len(&self) -> u64 {
        self.rows.iter().map(|(_, n)| n).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn multiplicity(&self, tuple: &Tuple) -> u64 {
        self.rows
            .iter()
            .find(|(t, _)| t == tuple)
            .map(|(_, n)| *n)
            .unwrap_or(0)
    }

    pub fn to_counts(&self) -> HashMap<Tuple, u64> {
        self.rows.iter().cloned().collect()
    }

    /// Rows sorted by tuple; handy for deterministic output.
    pub fn sorted_rows(&self) -> Vec<(Tuple, u64)> {
        let mut rows = self.rows.clone();
        rows.sort();
        rows
    }

    /// Multiset containment `self ⊆ other`.
    pub fn is_subbag_of(&self, other: &BagRelation) -> bool {
        let theirs = other.to_counts();
        self.rows
            .iter()
            .all(|(t, n)| theirs.get(t).copied().unwrap_or(0) >= *n)
    }
}

/// Multiset equality; row order and schema name are ignored.
impl PartialEq for BagRelation {
    fn eq(&self, other: &Self) -> bool {
        self.schema.same_shape(&other.schema)
            && self.rows.len() == other.rows.len()
            && self.to_counts() == other.to_counts()
    }
}

impl fmt::Display for BagRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{{", self.schema.name)?;
        for (i, (t, n)) in self.sorted_rows().iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}^{n}")?;
        }
        f.write_str("}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "+")]
    Insert,
    #[serde(rename = "-")]
    Delete,
}

impl Tag {
    pub fn sign(self) -> i64 {
        match self {
            Tag::Insert => 1,
            Tag::Delete => -1,
        }
    }

    /// Tag of the product of two delta tuples: equal tags insert, mixed delete.
    pub fn product(self, other: Tag) -> Tag {
        if self == other {
            Tag::Insert
        } else {
            Tag::Delete
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Tag::Insert => '+',
            Tag::Delete => '-',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeltaTuple {
    pub tag: Tag,
    pub tuple: Tuple,
    pub multiplicity: u64,
}

impl DeltaTuple {
    pub fn insert(tuple: Tuple, multiplicity: u64) -> Self {
        DeltaTuple {
            tag: Tag::Insert,
            tuple,
            multiplicity,
        }
    }

    pub fn delete(tuple: Tuple, multiplicity: u64) -> Self {
        DeltaTuple {
            tag: Tag::Delete,
            tuple,
            multiplicity,
        }
    }

    pub fn signed(&self) -> i64 {
        self.tag.sign() * self.multiplicity as i64
    }
}

/// A tagged multiset of inserted and deleted tuples for one relation.
#[derive(Debug, Clone)]
pub struct DeltaRelation {
    schema: Arc<Schema>,
    rows: Vec<DeltaTuple>,
}

impl DeltaRelation {
    pub fn empty(schema: Arc<Schema>) -> Self {
        DeltaRelation {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn new(schema: Arc<Schema>, rows: Vec<DeltaTuple>) -> Self {
        DeltaRelation {
            schema,
            rows: rows.into_iter().filter(|r| r.multiplicity > 0).collect(),
        }
    }

    pub fn checked(schema: Arc<Schema>, rows: Vec<DeltaTuple>) -> Result<Self> {
        for r in &rows {
            schema.check(&r.tuple)?;
        }
        Ok(Self::new(schema, rows))
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn rows(&self) -> &[DeltaTuple] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<DeltaTuple> {
        self.rows
    }

    pub fn push(&mut self, row: DeltaTuple) {
        if row.multiplicity > 0 {
            self.rows.push(row);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Number of delta tuples counting multiplicities.
    pub fn size(&self) -> u64 {
        self.rows.iter().map(|r| r.multiplicity).sum()
    }

    /// Signed net change per tuple, in first-seen order, zero entries dropped.
    pub fn net_counts(&self) -> IndexMap<Tuple, i64> {
        let mut net: IndexMap<Tuple, i64> = IndexMap::new();
        for r in &self.rows {
            *net.entry(r.tuple.clone()).or_insert(0) += r.signed();
        }
        net.retain(|_, n| *n != 0);
        net
    }

    /// The net delta: one insert or delete per tuple whose count changes.
    pub fn net(&self) -> DeltaRelation {
        let rows = self
            .net_counts()
            .into_iter()
            .map(|(tuple, n)| DeltaTuple {
                tag: if n > 0 { Tag::Insert } else { Tag::Delete },
                tuple,
                multiplicity: n.unsigned_abs(),
            })
            .collect();
        DeltaRelation {
            schema: self.schema.clone(),
            rows,
        }
    }

    /// Splits into singleton-multiplicity batches, preserving order.
    pub fn unit_batches(&self) -> Vec<DeltaRelation> {
        let mut out = Vec::new();
        for r in &self.rows {
            for _ in 0..r.multiplicity {
                out.push(DeltaRelation {
                    schema: self.schema.clone(),
                    rows: vec![DeltaTuple {
                        tag: r.tag,
                        tuple: r.tuple.clone(),
                        multiplicity: 1,
                    }],
                });
            }
        }
        out
    }
}

/// Delta equality compares net effects.
impl PartialEq for DeltaRelation {
    fn eq(&self, other: &Self) -> bool {
        let a: HashMap<_, _> = self.net_counts().into_iter().collect();
        let b: HashMap<_, _> = other.net_counts().into_iter().collect();
        self.schema.same_shape(&other.schema) && a == b
    }
}

/// Applies a delta to a relation: `R ⊎ ΔR`.
pub fn apply_relation_delta(rel: &BagRelation, delta: &DeltaRelation) -> Result<BagRelation> {
    if !rel.schema().same_shape(delta.schema()) {
        return Err(Error::SchemaMismatch(format!(
            "delta for {} does not match {}",
            delta.schema().name,
            rel.schema().name
        )));
    }
    let mut counts: IndexMap<Tuple, u64> = rel.rows().iter().cloned().collect();
    for (tuple, n) in delta.net_counts() {
        let current = counts.get(&tuple).copied().unwrap_or(0);
        let updated = current as i64 + n;
        if updated < 0 {
            return Err(Error::IllFormedDelta(format!(
                "deleting {} copies of {tuple} from {} but only {current} exist",
                -n,
                rel.schema().name
            )));
        }
        if updated == 0 {
            counts.shift_remove(&tuple);
        } else {
            counts.insert(tuple, updated as u64);
        }
    }
    Ok(BagRelation::from_consolidated(
        rel.schema().clone(),
        counts.into_iter().collect(),
    ))
}

/// Computes the delta turning `from` into `to`.
pub fn diff_relation(from: &BagRelation, to: &BagRelation) -> Result<DeltaRelation> {
    if !from.schema().same_shape(to.schema()) {
        return Err(Error::SchemaMismatch(format!(
            "{} and {} have different attributes",
            from.schema().name,
            to.schema().name
        )));
    }
    let old = from.to_counts();
    let new = to.to_counts();
    let mut rows = Vec::new();
    for (t, n) in from.rows() {
        let m = new.get(t).copied().unwrap_or(0);
        if m < *n {
            rows.push(DeltaTuple::delete(t.clone(), n - m));
        }
    }
    for (t, m) in to.rows() {
        let n = old.get(t).copied().unwrap_or(0);
        if *m > n {
            rows.push(DeltaTuple::insert(t.clone(), m - n));
        }
    }
    Ok(DeltaRelation::new(from.schema().clone(), rows))
}

/// A set of named relations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Database {
    relations: BTreeMap<String, BagRelation>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, rel: BagRelation) {
        self.relations.insert(rel.schema().name.clone(), rel);
    }

    pub fn with(mut self, rel: BagRelation) -> Self {
        self.insert(rel);
        self
    }

    pub fn get(&self, name: &str) -> Result<&BagRelation> {
        self.relations
            .get(name)
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    pub fn schema(&self, name: &str) -> Result<&Arc<Schema>> {
        self.get(name).map(|r| r.schema())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(String::as_str)
    }

    pub fn relations(&self) -> impl Iterator<Item = &BagRelation> {
        self.relations.values()
    }

    /// The same database with every relation emptied.
    pub fn emptied(&self) -> Database {
        Database {
            relations: self
                .relations
                .iter()
                .map(|(k, r)| (k.clone(), BagRelation::empty(r.schema().clone())))
                .collect(),
        }
    }
}

/// Deltas for a set of relations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeltaDatabase {
    relations: BTreeMap<String, DeltaRelation>,
}

impl DeltaDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, delta: DeltaRelation) {
        self.relations.insert(delta.schema().name.clone(), delta);
    }

    pub fn with(mut self, delta: DeltaRelation) -> Self {
        self.insert(delta);
        self
    }

    pub fn get(&self, name: &str) -> Option<&DeltaRelation> {
        self.relations.get(name)
    }

    pub fn relations(&self) -> impl Iterator<Item = &DeltaRelation> {
        self.relations.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.relations.values().all(DeltaRelation::is_empty)
    }

    /// Total delta tuples counting multiplicities.
    pub fn size(&self) -> u64 {
        self.relations.values().map(DeltaRelation::size).sum()
    }
}

/// `D ⊎ ΔD`.
pub fn apply_delta(db: &Database, delta: &DeltaDatabase) -> Result<Database> {
    let mut out = db.clone();
    for d in delta.relations() {
        let rel = db.get(&d.schema().name)?;
        out.insert(apply_relation_delta(rel, d)?);
    }
    Ok(out)
}

/// The delta between two databases over the same relations.
pub fn diff(d1: &Database, d2: &Database) -> Result<DeltaDatabase> {
    let names1: Vec<_> = d1.names().collect();
    let names2: Vec<_> = d2.names().collect();
    if names1 != names2 {
        return Err(Error::SchemaMismatch(format!(
            "relation sets differ: {names1:?} vs {names2:?}"
        )));
    }
    let mut out = DeltaDatabase::new();
    for rel in d1.relations() {
        let other = d2.get(&rel.schema().name)?;
        let delta = diff_relation(rel, other)?;
        if !delta.is_empty() {
            out.insert(delta);
        }
    }
    Ok(out)
}
