//! Range partitions, the partition catalog, annotation of base data and
//! sketch instances.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::annotated::{AnnotatedDelta, AnnotatedDeltaTuple, AnnotatedRelation, AnnotatedTuple};
use crate::error::{Error, Result};
use crate::exec;
use crate::plan::{CmpOp, Predicate, ScalarExpr};
use crate::relation::{BagRelation, Database, DeltaRelation, Schema};
use crate::sketch::{FragmentId, Sketch};
use crate::value::{Kind, Tuple, Value};

/// Default number of fragments for equi-depth partitions.
pub const DEFAULT_FRAGMENTS: usize = 128;

/// An interval of attribute values. `high` is inclusive unless `high_open`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Range {
    pub low: Value,
    pub high: Value,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub high_open: bool,
}

impl Range {
    pub fn closed(low: impl Into<Value>, high: impl Into<Value>) -> Self {
        Range {
            low: low.into(),
            high: high.into(),
            high_open: false,
        }
    }

    pub fn contains(&self, v: &Value) -> bool {
        if v.kind() != self.low.kind() || *v < self.low {
            return false;
        }
        if self.high_open {
            *v < self.high
        } else {
            *v <= self.high
        }
    }

    /// `low <= attr AND attr <= high` (or `< high` when open).
    pub fn to_predicate(&self, attribute: &str) -> Predicate {
        let high_op = if self.high_open { CmpOp::Lt } else { CmpOp::Le };
        if self.low == self.high && !self.high_open {
            return Predicate::cmp(
                ScalarExpr::attr(attribute),
                CmpOp::Eq,
                ScalarExpr::Const(self.low.clone()),
            );
        }
        Predicate::and(vec![
            Predicate::cmp(
                ScalarExpr::attr(attribute),
                CmpOp::Ge,
                ScalarExpr::Const(self.low.clone()),
            ),
            Predicate::cmp(
                ScalarExpr::attr(attribute),
                high_op,
                ScalarExpr::Const(self.high.clone()),
            ),
        ])
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let close = if self.high_open { ')' } else { ']' };
        write!(f, "[{},{}{close}", self.low, self.high)
    }
}

/// Ordered, disjoint, gap-free ranges over one attribute of one relation.
///
/// Built from `n + 1` strictly increasing boundaries. Integer partitions use
/// closed ranges `[b_i, b_{i+1} - 1]`; float and string partitions use
/// half-open ranges `[b_i, b_{i+1})`. The last range is always closed.
#[derive(Debug, Clone, PartialEq)]
pub struct RangePartition {
    relation: String,
    attribute: String,
    kind: Kind,
    ranges: Vec<Range>,
}

impl RangePartition {
    pub fn from_boundaries(relation: &str, attribute: &str, boundaries: Vec<Value>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::InvalidPartition(format!(
                "{relation}.{attribute} needs at least two boundaries"
            )));
        }
        let kind = boundaries[0].kind();
        for b in &boundaries {
            if b.kind() != kind {
                return Err(Error::KindMismatch {
                    expected: kind.to_string(),
                    got: b.kind().to_string(),
                });
            }
            if let Value::F64(x) = b {
                if !x.is_finite() {
                    return Err(Error::InvalidPartition(format!(
                        "non-finite boundary {x} for {relation}.{attribute}"
                    )));
                }
            }
        }
        if let Some(w) = boundaries.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPartition(format!(
                "boundaries of {relation}.{attribute} not strictly increasing at {} >= {}",
                w[0], w[1]
            )));
        }
        let n = boundaries.len() - 1;
        let ranges = (0..n)
            .map(|i| {
                let last = i + 1 == n;
                let low = boundaries[i].clone();
                match (&boundaries[i + 1], last) {
                    (high, true) => Range {
                        low,
                        high: high.clone(),
                        high_open: false,
                    },
                    (Value::I64(h), false) => Range {
                        low,
                        high: Value::I64(h - 1),
                        high_open: false,
                    },
                    (high, false) => Range {
                        low,
                        high: high.clone(),
                        high_open: true,
                    },
                }
            })
            .collect();
        Ok(RangePartition {
            relation: relation.to_string(),
            attribute: attribute.to_string(),
            kind,
            ranges,
        })
    }

    /// Equi-depth boundaries from observed values, widened to `domain`.
    ///
    /// Without a domain, numeric partitions cover the whole kind; string
    /// partitions cover `["", max observed]`.
    pub fn equi_depth(
        relation: &str,
        attribute: &str,
        kind: Kind,
        mut values: Vec<Value>,
        fragments: usize,
        domain: Option<(Value, Value)>,
    ) -> Result<Self> {
        if fragments == 0 {
            return Err(Error::InvalidPartition("zero fragments requested".into()));
        }
        if let Some(v) = values.iter().find(|v| v.kind() != kind) {
            return Err(Error::KindMismatch {
                expected: kind.to_string(),
                got: v.kind().to_string(),
            });
        }
        values.sort_unstable();
        let (min, max) = match domain {
            Some(d) => d,
            None => match kind {
                Kind::I64 => (Value::I64(i64::MIN), Value::I64(i64::MAX)),
                Kind::F64 => (Value::F64(f64::MIN), Value::F64(f64::MAX)),
                Kind::Str => (
                    Value::str(""),
                    values.last().cloned().unwrap_or_else(|| Value::str("")),
                ),
            },
        };
        let mut bounds = vec![min.clone()];
        let n = values.len();
        for i in 1..fragments {
            if n == 0 {
                break;
            }
            let q = &values[i * n / fragments];
            if q > bounds.last().unwrap() && *q < max {
                bounds.push(q.clone());
            }
        }
        if max > min {
            bounds.push(max);
        } else {
            return Err(Error::InvalidPartition(format!(
                "empty domain for {relation}.{attribute}"
            )));
        }
        Self::from_boundaries(relation, attribute, bounds)
    }

    pub fn relation(&self) -> &str {
        &self.relation
    }

    pub fn attribute(&self) -> &str {
        &self.attribute
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn ranges(&self) -> &[Range] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// The `n + 1` boundaries this partition was built from.
    pub fn boundaries(&self) -> Vec<Value> {
        let mut out: Vec<Value> = self.ranges.iter().map(|r| r.low.clone()).collect();
        out.push(self.ranges.last().expect("non-empty").high.clone());
        out
    }

    /// Index of the range containing `v`, by binary search.
    pub fn range_of(&self, v: &Value) -> Result<usize> {
        if v.kind() != self.kind {
            return Err(Error::KindMismatch {
                expected: self.kind.to_string(),
                got: v.kind().to_string(),
            });
        }
        let pos = self.ranges.partition_point(|r| r.low <= *v);
        if pos == 0 || !self.ranges[pos - 1].contains(v) || is_nan(v) {
            return Err(Error::OutOfDomain {
                relation: self.relation.clone(),
                attribute: self.attribute.clone(),
                value: v.to_string(),
            });
        }
        Ok(pos - 1)
    }
}

fn is_nan(v: &Value) -> bool {
    matches!(v, Value::F64(x) if x.is_nan())
}

/// How one relation is split into fragments.
#[derive(Debug, Clone, PartialEq)]
pub enum Partition {
    Ranges(RangePartition),
    /// A single fragment holding every tuple of the relation.
    Whole { relation: String },
}

impl Partition {
    pub fn whole(relation: &str) -> Self {
        Partition::Whole {
            relation: relation.to_string(),
        }
    }

    pub fn relation(&self) -> &str {
        match self {
            Partition::Ranges(p) => p.relation(),
            Partition::Whole { relation } => relation,
        }
    }

    pub fn attribute(&self) -> Option<&str> {
        match self {
            Partition::Ranges(p) => Some(p.attribute()),
            Partition::Whole { .. } => None,
        }
    }

    pub fn fragment_count(&self) -> usize {
        match self {
            Partition::Ranges(p) => p.len(),
            Partition::Whole { .. } => 1,
        }
    }

    pub fn to_spec(&self) -> PartitionSpec {
        match self {
            Partition::Ranges(p) => PartitionSpec {
                relation: p.relation.clone(),
                attribute: Some(p.attribute.clone()),
                boundaries: p.boundaries(),
            },
            Partition::Whole { relation } => PartitionSpec {
                relation: relation.clone(),
                attribute: None,
                boundaries: Vec::new(),
            },
        }
    }
}

/// Serializable description of a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub relation: String,
    #[serde(default)]
    pub attribute: Option<String>,
    #[serde(default)]
    pub boundaries: Vec<Value>,
}

impl PartitionSpec {
    pub fn build(&self) -> Result<Partition> {
        match &self.attribute {
            None => Ok(Partition::whole(&self.relation)),
            Some(attr) => Ok(Partition::Ranges(RangePartition::from_boundaries(
                &self.relation,
                attr,
                self.boundaries.clone(),
            )?)),
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    partition: Partition,
    offset: u32,
}

/// The partitions of a database and their global fragment numbering.
///
/// Fragment ids are assigned densely in declaration order: the ranges of the
/// first relation come first.
#[derive(Debug, Clone)]
pub struct PartitionCatalog {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    width: u32,
}

impl PartialEq for PartitionCatalog {
    fn eq(&self, other: &Self) -> bool {
        self.specs() == other.specs()
    }
}

impl PartitionCatalog {
    pub fn new(partitions: Vec<Partition>) -> Result<Self> {
        let mut entries = Vec::with_capacity(partitions.len());
        let mut index = HashMap::new();
        let mut offset = 0u32;
        for partition in partitions {
            let name = partition.relation().to_string();
            if index.insert(name.clone(), entries.len()).is_some() {
                return Err(Error::InvalidPartition(format!(
                    "relation {name} partitioned twice"
                )));
            }
            let n = partition.fragment_count() as u32;
            entries.push(Entry { partition, offset });
            offset = offset
                .checked_add(n)
                .ok_or_else(|| Error::InvalidPartition("too many fragments".into()))?;
        }
        Ok(PartitionCatalog {
            entries,
            index,
            width: offset,
        })
    }

    pub fn from_specs(specs: &[PartitionSpec]) -> Result<Self> {
        Self::new(specs.iter().map(PartitionSpec::build).collect::<Result<_>>()?)
    }

    pub fn specs(&self) -> Vec<PartitionSpec> {
        self.entries.iter().map(|e| e.partition.to_spec()).collect()
    }

    /// Total number of fragments F.
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.partition.relation())
    }

    pub fn contains(&self, relation: &str) -> bool {
        self.index.contains_key(relation)
    }

    fn entry(&self, relation: &str) -> Result<&Entry> {
        self.index
            .get(relation)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::InvalidPartition(format!("no partition declared for {relation}")))
    }

    pub fn partition(&self, relation: &str) -> Result<&Partition> {
        self.entry(relation).map(|e| &e.partition)
    }

    pub fn fragment_id(&self, relation: &str, range: usize) -> Result<FragmentId> {
        let e = self.entry(relation)?;
        if range >= e.partition.fragment_count() {
            return Err(Error::InvalidPartition(format!(
                "{relation} has no range {range}"
            )));
        }
        Ok(FragmentId(e.offset + range as u32))
    }

    /// Inverse of [`PartitionCatalog::fragment_id`].
    pub fn locate(&self, id: FragmentId) -> Option<(&str, usize)> {
        let pos = self.entries.partition_point(|e| e.offset <= id.0);
        let e = self.entries.get(pos.checked_sub(1)?)?;
        let local = (id.0 - e.offset) as usize;
        (local < e.partition.fragment_count()).then(|| (e.partition.relation(), local))
    }

    /// The global fragment holding value `v` of the relation's partition attribute.
    pub fn fragment_of(&self, relation: &str, v: &Value) -> Result<FragmentId> {
        let e = self.entry(relation)?;
        match &e.partition {
            Partition::Ranges(p) => Ok(FragmentId(e.offset + p.range_of(v)? as u32)),
            Partition::Whole { .. } => Ok(FragmentId(e.offset)),
        }
    }

    /// All fragments of one relation.
    pub fn relation_mask(&self, relation: &str) -> Result<Sketch> {
        let e = self.entry(relation)?;
        let n = e.partition.fragment_count() as u32;
        Ok(Sketch::from_ids(
            self.width,
            (e.offset..e.offset + n).map(FragmentId),
        ))
    }

    pub fn empty_sketch(&self) -> Sketch {
        Sketch::empty(self.width)
    }

    /// Resolves the partition attribute of `relation` against its schema.
    pub fn resolver(&self, schema: &Schema) -> Result<FragmentResolver<'_>> {
        let e = self.entry(&schema.name)?;
        let column = match &e.partition {
            Partition::Ranges(p) => {
                let idx = schema.index_of(p.attribute())?;
                if schema.kind_of(idx) != p.kind() {
                    return Err(Error::KindMismatch {
                        expected: p.kind().to_string(),
                        got: schema.kind_of(idx).to_string(),
                    });
                }
                Some((idx, p))
            }
            Partition::Whole { .. } => None,
        };
        Ok(FragmentResolver {
            offset: e.offset,
            column,
        })
    }

    /// Checks that every partition references an existing attribute of matching kind.
    pub fn validate_against(&self, lookup: &dyn crate::plan::SchemaLookup) -> Result<()> {
        for e in &self.entries {
            let schema = lookup.schema_of(e.partition.relation())?;
            self.resolver(&schema)?;
        }
        Ok(())
    }

    /// Merged maximal intervals covered by the sketch's fragments of `relation`.
    pub fn compress_ranges(&self, sketch: &Sketch, relation: &str) -> Result<Vec<Range>> {
        let e = self.entry(relation)?;
        let p = match &e.partition {
            Partition::Ranges(p) => p,
            Partition::Whole { .. } => {
                return Err(Error::InvalidPartition(format!(
                    "{relation} has no range partition"
                )))
            }
        };
        let mut out: Vec<Range> = Vec::new();
        let mut prev_included = false;
        for (i, r) in p.ranges.iter().enumerate() {
            let included = sketch.contains(FragmentId(e.offset + i as u32));
            if included {
                match out.last_mut() {
                    Some(last) if prev_included => {
                        last.high = r.high.clone();
                        last.high_open = r.high_open;
                    }
                    _ => out.push(r.clone()),
                }
            }
            prev_included = included;
        }
        Ok(out)
    }

    /// The row filter a sketch imposes on one relation.
    pub fn range_filter(&self, sketch: &Sketch, relation: &str) -> Result<RangeFilter> {
        let e = self.entry(relation)?;
        let n = e.partition.fragment_count() as u32;
        let present = (e.offset..e.offset + n)
            .filter(|&i| sketch.contains(FragmentId(i)))
            .count() as u32;
        if present == 0 {
            return Ok(RangeFilter::Nothing);
        }
        if present == n {
            return Ok(RangeFilter::All);
        }
        let attribute = e.partition.attribute().expect("whole partitions have one fragment");
        Ok(RangeFilter::Ranges {
            attribute: attribute.to_string(),
            ranges: self.compress_ranges(sketch, relation)?,
        })
    }
}

/// Fast tuple-to-fragment mapping for one relation.
#[derive(Debug, Clone, Copy)]
pub struct FragmentResolver<'a> {
    offset: u32,
    column: Option<(usize, &'a RangePartition)>,
}

impl FragmentResolver<'_> {
    pub fn fragment(&self, tuple: &Tuple) -> Result<FragmentId> {
        match self.column {
            None => Ok(FragmentId(self.offset)),
            Some((idx, p)) => Ok(FragmentId(self.offset + p.range_of(tuple.get(idx))? as u32)),
        }
    }

    /// Fragment of a row given only its partition-attribute value.
    pub fn fragment_of_value(&self, v: &Value) -> Result<FragmentId> {
        match self.column {
            None => Ok(FragmentId(self.offset)),
            Some((_, p)) => Ok(FragmentId(self.offset + p.range_of(v)? as u32)),
        }
    }

    /// Column index of the partition attribute, if any.
    pub fn column(&self) -> Option<usize> {
        self.column.map(|(i, _)| i)
    }
}

/// A selection derived from a sketch for one relation.
#[derive(Debug, Clone, PartialEq)]
pub enum RangeFilter {
    All,
    Nothing,
    Ranges { attribute: String, ranges: Vec<Range> },
}

impl RangeFilter {
    pub fn to_predicate(&self) -> Predicate {
        match self {
            RangeFilter::All => Predicate::True,
            RangeFilter::Nothing => Predicate::False,
            RangeFilter::Ranges { attribute, ranges } => {
                Predicate::or(ranges.iter().map(|r| r.to_predicate(attribute)).collect())
            }
        }
    }
}

/// Pairs every tuple with the singleton sketch of its fragment.
pub fn annotate(rel: &BagRelation, catalog: &PartitionCatalog) -> Result<AnnotatedRelation> {
    let resolver = catalog.resolver(rel.schema())?;
    let width = catalog.width();
    let rows = exec::try_map(rel.rows(), |(t, n)| {
        Ok(AnnotatedTuple {
            tuple: t.clone(),
            sketch: Sketch::singleton(width, resolver.fragment(t)?),
            multiplicity: *n,
        })
    })?;
    Ok(AnnotatedRelation::new(rel.schema().clone(), rows))
}

/// Annotates a delta, keeping tags.
pub fn annotate_delta(delta: &DeltaRelation, catalog: &PartitionCatalog) -> Result<AnnotatedDelta> {
    let resolver = catalog.resolver(delta.schema())?;
    let width = catalog.width();
    let rows = delta
        .rows()
        .iter()
        .map(|r| {
            Ok(AnnotatedDeltaTuple {
                tag: r.tag,
                tuple: r.tuple.clone(),
                sketch: Sketch::singleton(width, resolver.fragment(&r.tuple)?),
                multiplicity: r.multiplicity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnnotatedDelta::new(delta.schema().clone(), rows))
}

/// The sub-database of tuples in the sketch's fragments. Relations the
/// catalog does not know are kept whole.
pub fn sketch_instance(sketch: &Sketch, db: &Database, catalog: &PartitionCatalog) -> Result<Database> {
    let mut out = Database::new();
    for rel in db.relations() {
        if !catalog.contains(&rel.schema().name) {
            out.insert(rel.clone());
            continue;
        }
        let resolver = catalog.resolver(rel.schema())?;
        let mut rows = Vec::new();
        for (t, n) in rel.iter() {
            if sketch.contains(resolver.fragment(t)?) {
                rows.push((t.clone(), n));
            }
        }
        out.insert(BagRelation::from_consolidated(rel.schema().clone(), rows));
    }
    Ok(out)
}

/// Parses a partition spec file: one CSV record per relation,
/// `relation,attribute,b0,b1,...,bn`, or `relation,*` for a single fragment.
/// Boundary kinds come from `kind_of(relation, attribute)`.
pub fn parse_partition_specs(
    text: &str,
    kind_of: impl Fn(&str, &str) -> Result<Kind>,
) -> Result<Vec<PartitionSpec>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut specs = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("partition spec: {e}")))?;
        if record.len() < 2 {
            return Err(Error::Parse(format!(
                "partition spec record {}: expected relation and attribute",
                line + 1
            )));
        }
        let relation = record[0].to_string();
        if &record[1] == "*" {
            specs.push(PartitionSpec {
                relation,
                attribute: None,
                boundaries: Vec::new(),
            });
            continue;
        }
        let attribute = record[1].to_string();
        let kind = kind_of(&relation, &attribute)?;
        let boundaries = record
            .iter()
            .skip(2)
            .map(|b| kind.parse(b))
            .collect::<Result<Vec<_>>>()?;
        specs.push(PartitionSpec {
            relation,
            attribute: Some(attribute),
            boundaries,
        });
    }
    Ok(specs)
}

pub fn format_partition_specs(specs: &[PartitionSpec]) -> Result<String> {
    let mut writer = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(Vec::new());
    for spec in specs {
        let mut record = vec![spec.relation.clone()];
        match &spec.attribute {
            None => record.push("*".into()),
            Some(a) => {
                record.push(a.clone());
                record.extend(spec.boundaries.iter().map(Value::to_string));
            }
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Convenience for building a catalog against known schemas.
pub fn catalog_for(
    partitions: Vec<Partition>,
    schemas: &[Arc<Schema>],
) -> Result<PartitionCatalog> {
    let catalog = PartitionCatalog::new(partitions)?;
    for s in schemas {
        if catalog.contains(&s.name) {
            catalog.resolver(s)?;
        }
    }
    Ok(catalog)
}
