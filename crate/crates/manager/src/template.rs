//! Query templates: plans with their constants lifted out.

use std::fmt;

use serde::{Deserialize, Serialize};
use sketchd_core::{Predicate, ProjectItem, QueryPlan, ScalarExpr, Value};

/// A plan shape plus the constants that were replaced by placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryTemplate {
    /// Canonical text of the plan with every constant replaced.
    pub shape: String,
    /// Constants below every aggregate and top-k.
    pub constants: Vec<Value>,
    /// Constants of selections over aggregate or top-k results, and top-k limits.
    pub parameters: Vec<Value>,
}

impl QueryTemplate {
    pub fn of(plan: &QueryPlan) -> QueryTemplate {
        let mut t = QueryTemplate {
            shape: String::new(),
            constants: Vec::new(),
            parameters: Vec::new(),
        };
        let shape = lift(plan, &mut t);
        t.shape = serde_json::to_string(&shape).expect("plans serialize");
        t
    }

    /// Same shape and the same constants outside parameters.
    pub fn same_family(&self, other: &QueryTemplate) -> bool {
        self.shape == other.shape && self.constants == other.constants
    }
}

impl fmt::Display for QueryTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [", self.shape)?;
        for (i, v) in self.constants.iter().chain(&self.parameters).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

fn placeholder() -> Value {
    Value::str("?")
}

fn stateful(plan: &QueryPlan) -> bool {
    matches!(plan, QueryPlan::Aggregate { .. } | QueryPlan::TopK { .. }) || plan.children().into_iter().any(stateful)
}

fn lift_expr(e: &ScalarExpr, out: &mut Vec<Value>) -> ScalarExpr {
    match e {
        ScalarExpr::Attr(a) => ScalarExpr::Attr(a.clone()),
        ScalarExpr::Const(v) => {
            out.push(v.clone());
            ScalarExpr::Const(placeholder())
        }
        ScalarExpr::Add(a, b) => ScalarExpr::Add(Box::new(lift_expr(a, out)), Box::new(lift_expr(b, out))),
        ScalarExpr::Sub(a, b) => ScalarExpr::Sub(Box::new(lift_expr(a, out)), Box::new(lift_expr(b, out))),
        ScalarExpr::Mul(a, b) => ScalarExpr::Mul(Box::new(lift_expr(a, out)), Box::new(lift_expr(b, out))),
    }
}

fn lift_pred(p: &Predicate, out: &mut Vec<Value>) -> Predicate {
    match p {
        Predicate::True => Predicate::True,
        Predicate::False => Predicate::False,
        Predicate::Cmp { op, left, right } => Predicate::Cmp {
            op: *op,
            left: lift_expr(left, out),
            right: lift_expr(right, out),
        },
        Predicate::And(ps) => Predicate::And(ps.iter().map(|p| lift_pred(p, out)).collect()),
        Predicate::Or(ps) => Predicate::Or(ps.iter().map(|p| lift_pred(p, out)).collect()),
        Predicate::Not(p) => Predicate::Not(Box::new(lift_pred(p, out))),
    }
}

fn lift(plan: &QueryPlan, t: &mut QueryTemplate) -> QueryPlan {
    let boxed = |p: &QueryPlan, t: &mut QueryTemplate| Box::new(lift(p, t));
    match plan {
        QueryPlan::TableAccess { relation } => QueryPlan::TableAccess {
            relation: relation.clone(),
        },
        QueryPlan::Select { predicate, input } => {
            let input_shape = boxed(input, t);
            let target = if stateful(input) { &mut t.parameters } else { &mut t.constants };
            QueryPlan::Select {
                predicate: lift_pred(predicate, target),
                input: input_shape,
            }
        }
        QueryPlan::Project { items, input } => {
            let input = boxed(input, t);
            let target = if stateful(plan) { &mut t.parameters } else { &mut t.constants };
            QueryPlan::Project {
                items: items
                    .iter()
                    .map(|i| ProjectItem {
                        expr: lift_expr(&i.expr, target),
                        name: i.name.clone(),
                    })
                    .collect(),
                input,
            }
        }
        QueryPlan::Join { predicate, left, right } => {
            let left_shape = boxed(left, t);
            let right_shape = boxed(right, t);
            let target = if stateful(plan) { &mut t.parameters } else { &mut t.constants };
            QueryPlan::Join {
                predicate: lift_pred(predicate, target),
                left: left_shape,
                right: right_shape,
            }
        }
        QueryPlan::Aggregate {
            group_by,
            aggregates,
            input,
        } => QueryPlan::Aggregate {
            group_by: group_by.clone(),
            aggregates: aggregates.clone(),
            input: boxed(input, t),
        },
        QueryPlan::TopK { k, order_by, input } => {
            let input = boxed(input, t);
            t.parameters.push(Value::I64(*k as i64));
            QueryPlan::TopK {
                k: 0,
                order_by: order_by.clone(),
                input,
            }
        }
        QueryPlan::Merge { input } => QueryPlan::Merge { input: boxed(input, t) },
    }
}
