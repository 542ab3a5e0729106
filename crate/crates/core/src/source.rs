//! Access to the current contents of base tables during maintenance.

use std::collections::HashMap;
use std::sync::Arc;

use crate::annotated::AnnotatedDeltaTuple;
use crate::bind::{BoundExpr, BoundPredicate, JoinKeys};
use crate::columnar::ColumnBatch;
use crate::error::Result;
use crate::partition::{FragmentResolver, PartitionCatalog};
use crate::relation::{BagRelation, Database, Schema};
use crate::sketch::Sketch;
use crate::value::{Tuple, Value};

/// A stateless selection/projection step applied to base rows.
#[derive(Debug, Clone)]
pub enum ChainOp {
    Select(BoundPredicate),
    Project(Vec<BoundExpr>),
}

/// A stateless operator chain over one base table, applied bottom-up.
#[derive(Debug, Clone)]
pub struct OffloadChain {
    pub relation: String,
    pub base_schema: Arc<Schema>,
    pub ops: Vec<ChainOp>,
}

impl OffloadChain {
    /// Runs a base tuple through the chain.
    pub fn apply(&self, tuple: &Tuple) -> Result<Option<Tuple>> {
        let mut current: Option<Tuple> = None;
        for op in &self.ops {
            let t = current.as_ref().unwrap_or(tuple);
            match op {
                ChainOp::Select(p) => {
                    if !p.eval(t)? {
                        return Ok(None);
                    }
                }
                ChainOp::Project(exprs) => {
                    let values = exprs.iter().map(|e| e.eval(t)).collect::<Result<Vec<_>>>()?;
                    current = Some(Tuple::new(values));
                }
            }
        }
        Ok(Some(current.unwrap_or_else(|| tuple.clone())))
    }

    /// The first selection over raw base columns, if any; usable for pruning.
    pub fn leading_filter(&self) -> Option<&BoundPredicate> {
        match self.ops.first() {
            Some(ChainOp::Select(p)) => Some(p),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Join of annotated delta rows with the current contents of a chain.
pub struct JoinRequest<'a> {
    pub chain: &'a OffloadChain,
    pub delta: &'a [AnnotatedDeltaTuple],
    /// Which join input the delta belongs to.
    pub delta_side: Side,
    pub keys: &'a JoinKeys,
    pub catalog: &'a PartitionCatalog,
}

impl JoinRequest<'_> {
    fn delta_key(&self, t: &Tuple) -> Tuple {
        match self.delta_side {
            Side::Left => self.keys.left_key(t),
            Side::Right => self.keys.right_key(t),
        }
    }

    fn table_key(&self, t: &Tuple) -> Tuple {
        match self.delta_side {
            Side::Left => self.keys.right_key(t),
            Side::Right => self.keys.left_key(t),
        }
    }

    /// Base-table columns holding the join keys, when the chain does not project.
    pub fn base_key_columns(&self) -> Option<&[usize]> {
        let projects = self.chain.ops.iter().any(|o| matches!(o, ChainOp::Project(_)));
        if projects || !self.keys.is_equi() {
            return None;
        }
        Some(match self.delta_side {
            Side::Left => &self.keys.right,
            Side::Right => &self.keys.left,
        })
    }

    /// Smallest and largest value of the first join key over the delta.
    pub fn delta_key_bounds(&self) -> Option<(Value, Value)> {
        let col = match self.delta_side {
            Side::Left => *self.keys.left.first()?,
            Side::Right => *self.keys.right.first()?,
        };
        let mut values = self.delta.iter().map(|d| d.tuple.get(col));
        let first = values.next()?;
        let (lo, hi) = values.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Some((lo.clone(), hi.clone()))
    }

    /// Indexes the delta once so that many row batches can be probed.
    pub fn prober(&self) -> Result<Prober<'_>> {
        let resolver = self.catalog.resolver(&self.chain.base_schema)?;
        let index = self.keys.is_equi().then(|| {
            let mut m: HashMap<Tuple, Vec<&AnnotatedDeltaTuple>> = HashMap::new();
            for d in self.delta {
                m.entry(self.delta_key(&d.tuple)).or_default().push(d);
            }
            m
        });
        Ok(Prober {
            request: self,
            resolver,
            index,
        })
    }

    /// Joins the delta against a batch of base rows.
    pub fn probe<'r>(&self, rows: impl Iterator<Item = (&'r Tuple, u64)>) -> Result<Vec<AnnotatedDeltaTuple>> {
        if self.delta.is_empty() {
            return Ok(Vec::new());
        }
        self.prober()?.probe(rows)
    }
}

pub struct Prober<'a> {
    request: &'a JoinRequest<'a>,
    resolver: FragmentResolver<'a>,
    index: Option<HashMap<Tuple, Vec<&'a AnnotatedDeltaTuple>>>,
}

impl Prober<'_> {
    pub fn probe<'r>(&self, rows: impl Iterator<Item = (&'r Tuple, u64)>) -> Result<Vec<AnnotatedDeltaTuple>> {
        let req = self.request;
        let mut out = Vec::new();
        for (base, n) in rows {
            let Some(t) = req.chain.apply(base)? else { continue };
            let candidates: &[&AnnotatedDeltaTuple] = match &self.index {
                Some(ix) => match ix.get(&req.table_key(&t)) {
                    Some(v) => v,
                    None => continue,
                },
                None => &[],
            };
            let sketch = Sketch::singleton(req.catalog.width(), self.resolver.fragment(base)?);
            let mut emit = |d: &AnnotatedDeltaTuple| -> Result<()> {
                let (l, r) = match req.delta_side {
                    Side::Left => (&d.tuple, &t),
                    Side::Right => (&t, &d.tuple),
                };
                if let Some(joined) = req.keys.matches(l, r)? {
                    out.push(AnnotatedDeltaTuple {
                        tag: d.tag,
                        tuple: joined,
                        sketch: d.sketch.union(&sketch),
                        multiplicity: d.multiplicity * n,
                    });
                }
                Ok(())
            };
            if self.index.is_some() {
                for d in candidates {
                    emit(d)?;
                }
            } else {
                for d in req.delta {
                    emit(d)?;
                }
            }
        }
        Ok(out)
    }
}

/// Read access to base tables at the version the engine state reflects.
pub trait TableSource: Sync {
    fn schema_of(&self, relation: &str) -> Result<Arc<Schema>>;

    fn scan(&self, relation: &str) -> Result<BagRelation>;

    /// Current contents as column batches. A tuple may appear in several
    /// batches; its multiplicity is the sum.
    fn scan_batches(&self, relation: &str) -> Result<Vec<ColumnBatch>> {
        let rel = self.scan(relation)?;
        Ok(vec![ColumnBatch::from_rows(rel.schema(), rel.iter())?])
    }

    /// Delta-join offload: joins delta rows with the chain's current output.
    fn join_delta(&self, request: &JoinRequest<'_>) -> Result<Vec<AnnotatedDeltaTuple>> {
        if request.delta.is_empty() {
            return Ok(Vec::new());
        }
        let rel = self.scan(&request.chain.relation)?;
        request.probe(rel.iter())
    }
}

impl TableSource for Database {
    fn schema_of(&self, relation: &str) -> Result<Arc<Schema>> {
        self.schema(relation).cloned()
    }

    fn scan(&self, relation: &str) -> Result<BagRelation> {
        self.get(relation).cloned()
    }
}

impl<T: TableSource + ?Sized> TableSource for &T {
    fn schema_of(&self, relation: &str) -> Result<Arc<Schema>> {
        (**self).schema_of(relation)
    }

    fn scan(&self, relation: &str) -> Result<BagRelation> {
        (**self).scan(relation)
    }

    fn scan_batches(&self, relation: &str) -> Result<Vec<ColumnBatch>> {
        (**self).scan_batches(relation)
    }

    fn join_delta(&self, request: &JoinRequest<'_>) -> Result<Vec<AnnotatedDeltaTuple>> {
        (**self).join_delta(request)
    }
}
