//! Column-wise row batches and vectorized evaluation of stateless chains.

use std::sync::Arc;

use crate::bind::{BoundExpr, BoundPredicate};
use crate::error::{Error, Result};
use crate::plan::CmpOp;
use crate::relation::Schema;
use crate::source::ChainOp;
use crate::value::{Kind, Tuple, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    I64(Vec<i64>),
    F64(Vec<f64>),
    Str(Vec<Arc<str>>),
}

impl ColumnData {
    pub fn with_capacity(kind: Kind, n: usize) -> Self {
        match kind {
            Kind::I64 => ColumnData::I64(Vec::with_capacity(n)),
            Kind::F64 => ColumnData::F64(Vec::with_capacity(n)),
            Kind::Str => ColumnData::Str(Vec::with_capacity(n)),
        }
    }

    pub fn kind(&self) -> Kind {
        match self {
            ColumnData::I64(_) => Kind::I64,
            ColumnData::F64(_) => Kind::F64,
            ColumnData::Str(_) => Kind::Str,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::I64(c) => c.len(),
            ColumnData::F64(c) => c.len(),
            ColumnData::Str(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, v: &Value) -> Result<()> {
        match (self, v) {
            (ColumnData::I64(c), Value::I64(x)) => c.push(*x),
            (ColumnData::F64(c), Value::F64(x)) => c.push(*x),
            (ColumnData::Str(c), Value::Str(x)) => c.push(x.clone()),
            (c, v) => {
                return Err(Error::TypeMismatch(format!(
                    "{} value {v} in a {} column",
                    v.kind(),
                    c.kind()
                )))
            }
        }
        Ok(())
    }

    pub fn get(&self, i: usize) -> Value {
        match self {
            ColumnData::I64(c) => Value::I64(c[i]),
            ColumnData::F64(c) => Value::F64(c[i]),
            ColumnData::Str(c) => Value::Str(c[i].clone()),
        }
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match self {
            ColumnData::I64(c) => Some(c),
            _ => None,
        }
    }

    fn gather(&self, positions: &[u32]) -> ColumnData {
        match self {
            ColumnData::I64(c) => ColumnData::I64(positions.iter().map(|&p| c[p as usize]).collect()),
            ColumnData::F64(c) => ColumnData::F64(positions.iter().map(|&p| c[p as usize]).collect()),
            ColumnData::Str(c) => {
                ColumnData::Str(positions.iter().map(|&p| c[p as usize].clone()).collect())
            }
        }
    }
}

/// Rows stored column-wise with a multiplicity per row. Rows with
/// multiplicity zero are absent.
#[derive(Debug, Clone)]
pub struct ColumnBatch {
    pub columns: Vec<Arc<ColumnData>>,
    pub multiplicities: Arc<Vec<u64>>,
}

impl ColumnBatch {
    pub fn from_rows<'a>(schema: &Schema, rows: impl IntoIterator<Item = (&'a Tuple, u64)>) -> Result<Self> {
        let mut columns: Vec<ColumnData> = schema
            .attributes
            .iter()
            .map(|a| ColumnData::with_capacity(a.kind, 0))
            .collect();
        let mut multiplicities = Vec::new();
        for (t, n) in rows {
            for (c, v) in columns.iter_mut().zip(t.values()) {
                c.push(v)?;
            }
            multiplicities.push(n);
        }
        Ok(ColumnBatch {
            columns: columns.into_iter().map(Arc::new).collect(),
            multiplicities: Arc::new(multiplicities),
        })
    }

    pub fn len(&self) -> usize {
        self.multiplicities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multiplicities.is_empty()
    }

    pub fn row(&self, i: usize) -> Tuple {
        Tuple::new(self.columns.iter().map(|c| c.get(i)).collect())
    }

    /// Rows with non-zero multiplicity.
    pub fn rows(&self) -> impl Iterator<Item = (Tuple, u64)> + '_ {
        (0..self.len())
            .filter(|&i| self.multiplicities[i] > 0)
            .map(|i| (self.row(i), self.multiplicities[i]))
    }

    /// Same columns with different multiplicities.
    pub fn with_multiplicities(&self, multiplicities: Vec<u64>) -> ColumnBatch {
        ColumnBatch {
            columns: self.columns.clone(),
            multiplicities: Arc::new(multiplicities),
        }
    }
}

/// The output of a chain over one batch: `columns` are indexed by position,
/// `positions` lists the live rows and `origin` maps each to its base row.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub columns: Vec<Arc<ColumnData>>,
    pub positions: Vec<u32>,
    pub origin: Vec<u32>,
}

impl ChainOutput {
    pub fn scan(batch: &ColumnBatch) -> Self {
        let live: Vec<u32> = (0..batch.len() as u32)
            .filter(|&i| batch.multiplicities[i as usize] > 0)
            .collect();
        ChainOutput {
            columns: batch.columns.clone(),
            positions: live.clone(),
            origin: live,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn select(self, predicate: &BoundPredicate) -> Result<Self> {
        if predicate.is_true() {
            return Ok(self);
        }
        let keep = eval_predicate(predicate, &self.columns, &self.positions)?;
        let (positions, origin) = self
            .positions
            .iter()
            .zip(&self.origin)
            .zip(keep)
            .filter_map(|(p, k)| k.then_some(p))
            .map(|(p, o)| (*p, *o))
            .unzip();
        Ok(ChainOutput {
            columns: self.columns,
            positions,
            origin,
        })
    }

    pub fn project(self, exprs: &[BoundExpr]) -> Result<Self> {
        let columns = exprs
            .iter()
            .map(|e| eval_expr(e, &self.columns, &self.positions).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(ChainOutput {
            columns,
            positions: (0..self.origin.len() as u32).collect(),
            origin: self.origin,
        })
    }

    pub fn apply(self, ops: &[ChainOp]) -> Result<Self> {
        ops.iter().try_fold(self, |out, op| match op {
            ChainOp::Select(p) => out.select(p),
            ChainOp::Project(e) => out.project(e),
        })
    }

    /// The `i`-th live row.
    pub fn row(&self, i: usize) -> Tuple {
        let p = self.positions[i] as usize;
        Tuple::new(self.columns.iter().map(|c| c.get(p)).collect())
    }

    pub fn value(&self, column: usize, i: usize) -> Value {
        self.columns[column].get(self.positions[i] as usize)
    }
}

/// An expression evaluated over `positions`, densely.
pub fn eval_expr(expr: &BoundExpr, columns: &[Arc<ColumnData>], positions: &[u32]) -> Result<ColumnData> {
    match expr {
        BoundExpr::Col(i) => Ok(columns[*i].gather(positions)),
        BoundExpr::Const(v) => {
            let mut c = ColumnData::with_capacity(v.kind(), positions.len());
            for _ in positions {
                c.push(v)?;
            }
            Ok(c)
        }
        BoundExpr::Add(a, b) | BoundExpr::Sub(a, b) | BoundExpr::Mul(a, b) => {
            let l = eval_expr(a, columns, positions)?;
            let r = eval_expr(b, columns, positions)?;
            if let (ColumnData::I64(x), ColumnData::I64(y)) = (&l, &r) {
                let op: fn(i64, i64) -> Option<i64> = match expr {
                    BoundExpr::Add(..) => i64::checked_add,
                    BoundExpr::Sub(..) => i64::checked_sub,
                    _ => i64::checked_mul,
                };
                let out = x
                    .iter()
                    .zip(y)
                    .map(|(p, q)| op(*p, *q).ok_or_else(|| Error::Overflow(format!("{p} and {q}"))))
                    .collect::<Result<Vec<_>>>()?;
                return Ok(ColumnData::I64(out));
            }
            let mut out: Option<ColumnData> = None;
            for i in 0..l.len() {
                let (p, q) = (l.get(i), r.get(i));
                let v = match expr {
                    BoundExpr::Add(..) => p.checked_add(&q)?,
                    BoundExpr::Sub(..) => p.checked_sub(&q)?,
                    _ => p.checked_mul(&q)?,
                };
                out.get_or_insert_with(|| ColumnData::with_capacity(v.kind(), l.len()))
                    .push(&v)?;
            }
            Ok(out.unwrap_or(ColumnData::F64(Vec::new())))
        }
    }
}

/// A predicate evaluated over `positions`.
pub fn eval_predicate(p: &BoundPredicate, columns: &[Arc<ColumnData>], positions: &[u32]) -> Result<Vec<bool>> {
    match p {
        BoundPredicate::True => Ok(vec![true; positions.len()]),
        BoundPredicate::False => Ok(vec![false; positions.len()]),
        BoundPredicate::Cmp { op, left, right } => compare(*op, left, right, columns, positions),
        BoundPredicate::And(ps) => {
            let mut acc = vec![true; positions.len()];
            for p in ps {
                for (a, b) in acc.iter_mut().zip(eval_predicate(p, columns, positions)?) {
                    *a &= b;
                }
            }
            Ok(acc)
        }
        BoundPredicate::Or(ps) => {
            let mut acc = vec![false; positions.len()];
            for p in ps {
                for (a, b) in acc.iter_mut().zip(eval_predicate(p, columns, positions)?) {
                    *a |= b;
                }
            }
            Ok(acc)
        }
        BoundPredicate::Not(p) => Ok(eval_predicate(p, columns, positions)?
            .into_iter()
            .map(|b| !b)
            .collect()),
    }
}

fn compare(
    op: CmpOp,
    left: &BoundExpr,
    right: &BoundExpr,
    columns: &[Arc<ColumnData>],
    positions: &[u32],
) -> Result<Vec<bool>> {
    // Column against integer constant needs no intermediate column.
    if let (BoundExpr::Col(i), BoundExpr::Const(Value::I64(c))) = (left, right) {
        if let ColumnData::I64(col) = columns[*i].as_ref() {
            return Ok(positions
                .iter()
                .map(|&p| op.holds(col[p as usize].cmp(c)))
                .collect());
        }
    }
    let l = eval_expr(left, columns, positions)?;
    let r = eval_expr(right, columns, positions)?;
    match (&l, &r) {
        (ColumnData::I64(x), ColumnData::I64(y)) => {
            Ok(x.iter().zip(y).map(|(a, b)| op.holds(a.cmp(b))).collect())
        }
        _ => (0..l.len())
            .map(|i| Ok(op.holds(l.get(i).try_cmp(&r.get(i))?)))
            .collect::<Result<Vec<_>>>(),
    }
}
