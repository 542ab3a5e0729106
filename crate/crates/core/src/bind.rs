//! Plans with attribute names resolved to column positions.

use std::cmp::Ordering;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::plan::{AggFn, CmpOp, Predicate, QueryPlan, ScalarExpr, SchemaLookup};
use crate::relation::Schema;
use crate::value::{Tuple, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum BoundExpr {
    Col(usize),
    Const(Value),
    Add(Box<BoundExpr>, Box<BoundExpr>),
    Sub(Box<BoundExpr>, Box<BoundExpr>),
    Mul(Box<BoundExpr>, Box<BoundExpr>),
}

impl BoundExpr {
    pub fn bind(expr: &ScalarExpr, schema: &Schema) -> Result<Self> {
        expr.kind(schema)?;
        Self::bind_unchecked(expr, schema)
    }

    fn bind_unchecked(expr: &ScalarExpr, schema: &Schema) -> Result<Self> {
        Ok(match expr {
            ScalarExpr::Attr(n) => BoundExpr::Col(schema.index_of(n)?),
            ScalarExpr::Const(v) => BoundExpr::Const(v.clone()),
            ScalarExpr::Add(a, b) => BoundExpr::Add(
                Box::new(Self::bind_unchecked(a, schema)?),
                Box::new(Self::bind_unchecked(b, schema)?),
            ),
            ScalarExpr::Sub(a, b) => BoundExpr::Sub(
                Box::new(Self::bind_unchecked(a, schema)?),
                Box::new(Self::bind_unchecked(b, schema)?),
            ),
            ScalarExpr::Mul(a, b) => BoundExpr::Mul(
                Box::new(Self::bind_unchecked(a, schema)?),
                Box::new(Self::bind_unchecked(b, schema)?),
            ),
        })
    }

    pub fn eval(&self, t: &Tuple) -> Result<Value> {
        match self {
            BoundExpr::Col(i) => Ok(t.get(*i).clone()),
            BoundExpr::Const(v) => Ok(v.clone()),
            BoundExpr::Add(a, b) => a.eval(t)?.checked_add(&b.eval(t)?),
            BoundExpr::Sub(a, b) => a.eval(t)?.checked_sub(&b.eval(t)?),
            BoundExpr::Mul(a, b) => a.eval(t)?.checked_mul(&b.eval(t)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundPredicate {
    True,
    False,
    Cmp {
        op: CmpOp,
        left: BoundExpr,
        right: BoundExpr,
    },
    And(Vec<BoundPredicate>),
    Or(Vec<BoundPredicate>),
    Not(Box<BoundPredicate>),
}

impl BoundPredicate {
    pub fn bind(p: &Predicate, schema: &Schema) -> Result<Self> {
        p.type_check(schema)?;
        Self::bind_unchecked(p, schema)
    }

    fn bind_unchecked(p: &Predicate, schema: &Schema) -> Result<Self> {
        Ok(match p {
            Predicate::True => BoundPredicate::True,
            Predicate::False => BoundPredicate::False,
            Predicate::Cmp { op, left, right } => BoundPredicate::Cmp {
                op: *op,
                left: BoundExpr::bind_unchecked(left, schema)?,
                right: BoundExpr::bind_unchecked(right, schema)?,
            },
            Predicate::And(ps) => BoundPredicate::And(
                ps.iter()
                    .map(|p| Self::bind_unchecked(p, schema))
                    .collect::<Result<_>>()?,
            ),
            Predicate::Or(ps) => BoundPredicate::Or(
                ps.iter()
                    .map(|p| Self::bind_unchecked(p, schema))
                    .collect::<Result<_>>()?,
            ),
            Predicate::Not(p) => BoundPredicate::Not(Box::new(Self::bind_unchecked(p, schema)?)),
        })
    }

    pub fn eval(&self, t: &Tuple) -> Result<bool> {
        match self {
            BoundPredicate::True => Ok(true),
            BoundPredicate::False => Ok(false),
            BoundPredicate::Cmp { op, left, right } => {
                Ok(op.holds(left.eval(t)?.try_cmp(&right.eval(t)?)?))
            }
            BoundPredicate::And(ps) => {
                for p in ps {
                    if !p.eval(t)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            BoundPredicate::Or(ps) => {
                for p in ps {
                    if p.eval(t)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            BoundPredicate::Not(p) => Ok(!p.eval(t)?),
        }
    }

    pub fn is_true(&self) -> bool {
        matches!(self, BoundPredicate::True)
    }
}

/// A join predicate split into equality keys and a residual.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinKeys {
    pub left: Vec<usize>,
    /// Positions within the right input.
    pub right: Vec<usize>,
    /// Evaluated over the concatenated tuple.
    pub residual: BoundPredicate,
    pub left_arity: usize,
}

impl JoinKeys {
    pub fn bind(p: &Predicate, left: &Schema, right: &Schema, joined: &Schema) -> Result<Self> {
        p.type_check(joined)?;
        let mut keys_l = Vec::new();
        let mut keys_r = Vec::new();
        let mut rest = Vec::new();
        for c in p.conjuncts() {
            if let Predicate::Cmp {
                op: CmpOp::Eq,
                left: ScalarExpr::Attr(a),
                right: ScalarExpr::Attr(b),
            } = c
            {
                match (left.index_of(a), right.index_of(b), left.index_of(b), right.index_of(a)) {
                    (Ok(i), Ok(j), _, _) | (_, _, Ok(i), Ok(j)) => {
                        keys_l.push(i);
                        keys_r.push(j);
                        continue;
                    }
                    _ => {}
                }
            }
            rest.push(c.clone());
        }
        Ok(JoinKeys {
            left: keys_l,
            right: keys_r,
            residual: BoundPredicate::bind(&Predicate::and(rest), joined)?,
            left_arity: left.arity(),
        })
    }

    pub fn is_equi(&self) -> bool {
        !self.left.is_empty()
    }

    pub fn left_key(&self, t: &Tuple) -> Tuple {
        t.project(&self.left)
    }

    pub fn right_key(&self, t: &Tuple) -> Tuple {
        t.project(&self.right)
    }

    /// Whether `l ∘ r` satisfies the whole predicate, given matching keys.
    pub fn residual_holds(&self, joined: &Tuple) -> Result<bool> {
        self.residual.eval(joined)
    }

    /// Evaluates the full predicate for a pair, keys included.
    pub fn matches(&self, l: &Tuple, r: &Tuple) -> Result<Option<Tuple>> {
        for (i, j) in self.left.iter().zip(&self.right) {
            if l.get(*i) != r.get(*j) {
                return Ok(None);
            }
        }
        let joined = l.concat(r);
        Ok(self.residual.eval(&joined)?.then_some(joined))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundAgg {
    pub func: AggFn,
    pub arg: usize,
}

/// A sort key: column and direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundSort {
    pub col: usize,
    pub desc: bool,
}

/// Compares two tuples by a list of sort keys.
pub fn compare_by(keys: &[BoundSort], a: &Tuple, b: &Tuple) -> Ordering {
    for k in keys {
        let o = a.get(k.col).cmp(b.get(k.col));
        let o = if k.desc { o.reverse() } else { o };
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

#[derive(Debug, Clone)]
pub enum BoundNode {
    Scan {
        relation: String,
    },
    Select {
        predicate: BoundPredicate,
        input: Box<BoundPlan>,
    },
    Project {
        exprs: Vec<BoundExpr>,
        input: Box<BoundPlan>,
    },
    Join {
        keys: JoinKeys,
        left: Box<BoundPlan>,
        right: Box<BoundPlan>,
    },
    Aggregate {
        group_by: Vec<usize>,
        aggregates: Vec<BoundAgg>,
        input: Box<BoundPlan>,
    },
    TopK {
        k: u64,
        order_by: Vec<BoundSort>,
        input: Box<BoundPlan>,
    },
    Merge {
        input: Box<BoundPlan>,
    },
}

/// A type-checked plan node with its output schema.
#[derive(Debug, Clone)]
pub struct BoundPlan {
    pub schema: Arc<Schema>,
    pub node: BoundNode,
}

impl BoundPlan {
    pub fn bind(plan: &QueryPlan, lookup: &dyn SchemaLookup) -> Result<Self> {
        plan.validate_structure()?;
        Self::bind_inner(plan, lookup)
    }

    fn bind_inner(plan: &QueryPlan, lookup: &dyn SchemaLookup) -> Result<Self> {
        let schema = plan.output_schema_unchecked(lookup)?;
        let node = match plan {
            QueryPlan::TableAccess { relation } => BoundNode::Scan {
                relation: relation.clone(),
            },
            QueryPlan::Select { predicate, input } => {
                let input = Self::bind_inner(input, lookup)?;
                BoundNode::Select {
                    predicate: BoundPredicate::bind(predicate, &input.schema)?,
                    input: Box::new(input),
                }
            }
            QueryPlan::Project { items, input } => {
                let input = Self::bind_inner(input, lookup)?;
                BoundNode::Project {
                    exprs: items
                        .iter()
                        .map(|it| BoundExpr::bind(&it.expr, &input.schema))
                        .collect::<Result<_>>()?,
                    input: Box::new(input),
                }
            }
            QueryPlan::Join {
                predicate,
                left,
                right,
            } => {
                let left = Self::bind_inner(left, lookup)?;
                let right = Self::bind_inner(right, lookup)?;
                BoundNode::Join {
                    keys: JoinKeys::bind(predicate, &left.schema, &right.schema, &schema)?,
                    left: Box::new(left),
                    right: Box::new(right),
                }
            }
            QueryPlan::Aggregate {
                group_by,
                aggregates,
                input,
            } => {
                let input = Self::bind_inner(input, lookup)?;
                BoundNode::Aggregate {
                    group_by: group_by
                        .iter()
                        .map(|g| input.schema.index_of(g))
                        .collect::<Result<_>>()?,
                    aggregates: aggregates
                        .iter()
                        .map(|a| {
                            Ok(BoundAgg {
                                func: a.func,
                                arg: input.schema.index_of(&a.arg)?,
                            })
                        })
                        .collect::<Result<_>>()?,
                    input: Box::new(input),
                }
            }
            QueryPlan::TopK { k, order_by, input } => {
                let input = Self::bind_inner(input, lookup)?;
                BoundNode::TopK {
                    k: *k,
                    order_by: order_by
                        .iter()
                        .map(|s| {
                            Ok(BoundSort {
                                col: input.schema.index_of(&s.attr)?,
                                desc: s.desc,
                            })
                        })
                        .collect::<Result<_>>()?,
                    input: Box::new(input),
                }
            }
            QueryPlan::Merge { input } => BoundNode::Merge {
                input: Box::new(Self::bind_inner(input, lookup)?),
            },
        };
        Ok(BoundPlan { schema, node })
    }

    pub fn children(&self) -> Vec<&BoundPlan> {
        match &self.node {
            BoundNode::Scan { .. } => Vec::new(),
            BoundNode::Select { input, .. }
            | BoundNode::Project { input, .. }
            | BoundNode::Aggregate { input, .. }
            | BoundNode::TopK { input, .. }
            | BoundNode::Merge { input } => vec![input],
            BoundNode::Join { left, right, .. } => vec![left, right],
        }
    }

    pub fn is_merge(&self) -> bool {
        matches!(self.node, BoundNode::Merge { .. })
    }

    /// The node below a `Merge` root, or this node.
    pub fn without_merge(&self) -> &BoundPlan {
        match &self.node {
            BoundNode::Merge { input } => input,
            _ => self,
        }
    }
}

/// Ensures a plan can be evaluated without a merge root.
pub(crate) fn reject_merge(plan: &BoundPlan) -> Result<()> {
    if plan.is_merge() {
        return Err(Error::InvalidPlan(
            "plain evaluation of a plan with a merge root".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tuple;
    use crate::value::Kind;

    fn schemas() -> (Schema, Schema, Schema) {
        let l = Schema::of("r", &[("a", Kind::I64), ("b", Kind::I64)]);
        let r = Schema::of("s", &[("c", Kind::I64), ("d", Kind::I64)]);
        let j = Schema::of("rs", &[("a", Kind::I64), ("b", Kind::I64), ("c", Kind::I64), ("d", Kind::I64)]);
        (l, r, j)
    }

    #[test]
    fn equality_conjuncts_become_keys() {
        let (l, r, j) = schemas();
        let p = Predicate::and(vec![
            Predicate::attr_eq("d", "b"),
            Predicate::attr_cmp("a", CmpOp::Gt, 3),
        ]);
        let keys = JoinKeys::bind(&p, &l, &r, &j).unwrap();
        assert_eq!(keys.left, vec![1]);
        assert_eq!(keys.right, vec![1]);
        assert!(keys.matches(&tuple![5, 8], &tuple![7, 8]).unwrap().is_some());
        assert!(keys.matches(&tuple![2, 8], &tuple![7, 8]).unwrap().is_none());
        assert!(keys.matches(&tuple![5, 9], &tuple![7, 8]).unwrap().is_none());
    }

    #[test]
    fn theta_join_has_no_keys() {
        let (l, r, j) = schemas();
        let keys = JoinKeys::bind(&Predicate::cmp(ScalarExpr::attr("a"), CmpOp::Lt, ScalarExpr::attr("c")), &l, &r, &j).unwrap();
        assert!(!keys.is_equi());
        assert!(keys.matches(&tuple![1, 0], &tuple![2, 0]).unwrap().is_some());
    }

    #[test]
    fn expressions_evaluate_with_overflow_checks() {
        let (l, _, _) = schemas();
        let e = BoundExpr::bind(&ScalarExpr::attr("a").mul(ScalarExpr::attr("b")), &l).unwrap();
        assert_eq!(e.eval(&tuple![6, 7]).unwrap(), Value::I64(42));
        assert!(matches!(e.eval(&tuple![i64::MAX, 2]), Err(Error::Overflow(_))));
    }
}
