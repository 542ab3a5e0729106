//! The query-plan algebra.
//!
//! Plans reference attributes by name. [`QueryPlan::output_schema`] type-checks
//! a plan against the schemas of its base relations; evaluation works on the
//! index-resolved form produced by [`crate::bind`].

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::{Attribute, Schema};
use crate::value::{Kind, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl CmpOp {
    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarExpr {
    Attr(String),
    Const(Value),
    Add(Box<ScalarExpr>, Box<ScalarExpr>),
    Sub(Box<ScalarExpr>, Box<ScalarExpr>),
    Mul(Box<ScalarExpr>, Box<ScalarExpr>),
}

#[allow(clippy::should_implement_trait)]
impl ScalarExpr {
    pub fn attr(name: &str) -> Self {
        ScalarExpr::Attr(name.to_string())
    }

    pub fn constant(v: impl Into<Value>) -> Self {
        ScalarExpr::Const(v.into())
    }

    pub fn mul(self, other: ScalarExpr) -> Self {
        ScalarExpr::Mul(Box::new(self), Box::new(other))
    }

    pub fn add(self, other: ScalarExpr) -> Self {
        ScalarExpr::Add(Box::new(self), Box::new(other))
    }

    pub fn sub(self, other: ScalarExpr) -> Self {
        ScalarExpr::Sub(Box::new(self), Box::new(other))
    }

    /// Result kind against an input schema.
    pub fn kind(&self, schema: &Schema) -> Result<Kind> {
        match self {
            ScalarExpr::Attr(name) => Ok(schema.kind_of(schema.index_of(name)?)),
            ScalarExpr::Const(v) => Ok(v.kind()),
            ScalarExpr::Add(a, b) | ScalarExpr::Sub(a, b) | ScalarExpr::Mul(a, b) => {
                let (ka, kb) = (a.kind(schema)?, b.kind(schema)?);
                if ka != kb || ka == Kind::Str {
                    return Err(Error::TypeMismatch(format!(
                        "arithmetic on {ka} and {kb} in {self}"
                    )));
                }
                Ok(ka)
            }
        }
    }

    pub fn referenced_attrs(&self, out: &mut Vec<String>) {
        match self {
            ScalarExpr::Attr(n) => out.push(n.clone()),
            ScalarExpr::Const(_) => {}
            ScalarExpr::Add(a, b) | ScalarExpr::Sub(a, b) | ScalarExpr::Mul(a, b) => {
                a.referenced_attrs(out);
                b.referenced_attrs(out);
            }
        }
    }

    /// Replaces attribute references using `f`.
    pub fn substitute(&self, f: &impl Fn(&str) -> Option<ScalarExpr>) -> ScalarExpr {
        match self {
            ScalarExpr::Attr(n) => f(n).unwrap_or_else(|| self.clone()),
            ScalarExpr::Const(_) => self.clone(),
            ScalarExpr::Add(a, b) => a.substitute(f).add(b.substitute(f)),
            ScalarExpr::Sub(a, b) => a.substitute(f).sub(b.substitute(f)),
            ScalarExpr::Mul(a, b) => a.substitute(f).mul(b.substitute(f)),
        }
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarExpr::Attr(n) => f.write_str(n),
            ScalarExpr::Const(Value::Str(s)) => write!(f, "'{s}'"),
            ScalarExpr::Const(v) => write!(f, "{v}"),
            ScalarExpr::Add(a, b) => write!(f, "({a} + {b})"),
            ScalarExpr::Sub(a, b) => write!(f, "({a} - {b})"),
            ScalarExpr::Mul(a, b) => write!(f, "({a} * {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    True,
    False,
    Cmp {
        op: CmpOp,
        left: ScalarExpr,
        right: ScalarExpr,
    },
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    pub fn cmp(left: ScalarExpr, op: CmpOp, right: ScalarExpr) -> Self {
        Predicate::Cmp { op, left, right }
    }

    /// `attr op constant`
    pub fn attr_cmp(attr: &str, op: CmpOp, value: impl Into<Value>) -> Self {
        Predicate::cmp(ScalarExpr::attr(attr), op, ScalarExpr::Const(value.into()))
    }

    /// `left = right` over two attributes.
    pub fn attr_eq(left: &str, right: &str) -> Self {
        Predicate::cmp(ScalarExpr::attr(left), CmpOp::Eq, ScalarExpr::attr(right))
    }

    pub fn and(parts: Vec<Predicate>) -> Self {
        let mut flat = Vec::new();
        for p in parts {
            match p {
                Predicate::True => {}
                Predicate::And(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => Predicate::True,
            1 => flat.pop().unwrap(),
            _ => Predicate::And(flat),
        }
    }

    pub fn or(parts: Vec<Predicate>) -> Self {
        let mut flat = Vec::new();
        for p in parts {
            match p {
                Predicate::False => {}
                Predicate::Or(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => Predicate::False,
            1 => flat.pop().unwrap(),
            _ => Predicate::Or(flat),
        }
    }

    /// Top-level conjuncts.
    pub fn conjuncts(&self) -> Vec<&Predicate> {
        match self {
            Predicate::True => Vec::new(),
            Predicate::And(parts) => parts.iter().flat_map(|p| p.conjuncts()).collect(),
            other => vec![other],
        }
    }

    pub fn type_check(&self, schema: &Schema) -> Result<()> {
        match self {
            Predicate::True | Predicate::False => Ok(()),
            Predicate::Cmp { left, right, .. } => {
                let (kl, kr) = (left.kind(schema)?, right.kind(schema)?);
                if kl != kr {
                    return Err(Error::TypeMismatch(format!(
                        "comparing {kl} with {kr} in {self}"
                    )));
                }
                Ok(())
            }
            Predicate::And(ps) | Predicate::Or(ps) => {
                ps.iter().try_for_each(|p| p.type_check(schema))
            }
            Predicate::Not(p) => p.type_check(schema),
        }
    }

    pub fn referenced_attrs(&self, out: &mut Vec<String>) {
        match self {
            Predicate::True | Predicate::False => {}
            Predicate::Cmp { left, right, .. } => {
                left.referenced_attrs(out);
                right.referenced_attrs(out);
            }
            Predicate::And(ps) | Predicate::Or(ps) => {
                ps.iter().for_each(|p| p.referenced_attrs(out))
            }
            Predicate::Not(p) => p.referenced_attrs(out),
        }
    }

    pub fn substitute(&self, f: &impl Fn(&str) -> Option<ScalarExpr>) -> Predicate {
        match self {
            Predicate::True | Predicate::False => self.clone(),
            Predicate::Cmp { op, left, right } => Predicate::Cmp {
                op: *op,
                left: left.substitute(f),
                right: right.substitute(f),
            },
            Predicate::And(ps) => Predicate::And(ps.iter().map(|p| p.substitute(f)).collect()),
            Predicate::Or(ps) => Predicate::Or(ps.iter().map(|p| p.substitute(f)).collect()),
            Predicate::Not(p) => Predicate::Not(Box::new(p.substitute(f))),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::True => f.write_str("TRUE"),
            Predicate::False => f.write_str("FALSE"),
            Predicate::Cmp { op, left, right } => write!(f, "{left} {} {right}", op.symbol()),
            Predicate::And(ps) => join(f, ps, " AND "),
            Predicate::Or(ps) => join(f, ps, " OR "),
            Predicate::Not(p) => write!(f, "NOT ({p})"),
        }
    }
}

fn join(f: &mut fmt::Formatter<'_>, ps: &[Predicate], sep: &str) -> fmt::Result {
    f.write_str("(")?;
    for (i, p) in ps.iter().enumerate() {
        if i > 0 {
            f.write_str(sep)?;
        }
        write!(f, "{p}")?;
    }
    f.write_str(")")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggFn {
    Sum,
    Count,
    Avg,
    Min,
    Max,
}

impl AggFn {
    pub fn output_kind(self, arg: Kind) -> Result<Kind> {
        match self {
            AggFn::Count => Ok(Kind::I64),
            AggFn::Avg => match arg {
                Kind::Str => Err(Error::TypeMismatch("avg over a string attribute".into())),
                _ => Ok(Kind::F64),
            },
            AggFn::Sum => match arg {
                Kind::Str => Err(Error::TypeMismatch("sum over a string attribute".into())),
                k => Ok(k),
            },
            AggFn::Min | AggFn::Max => Ok(arg),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AggFn::Sum => "sum",
            AggFn::Count => "count",
            AggFn::Avg => "avg",
            AggFn::Min => "min",
            AggFn::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggCall {
    pub func: AggFn,
    pub arg: String,
    pub output: String,
}

impl AggCall {
    pub fn new(func: AggFn, arg: &str, output: &str) -> Self {
        AggCall {
            func,
            arg: arg.to_string(),
            output: output.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortKey {
    pub attr: String,
    #[serde(default)]
    pub desc: bool,
}

impl SortKey {
    pub fn asc(attr: &str) -> Self {
        SortKey {
            attr: attr.to_string(),
            desc: false,
        }
    }

    pub fn desc(attr: &str) -> Self {
        SortKey {
            attr: attr.to_string(),
            desc: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectItem {
    pub expr: ScalarExpr,
    pub name: String,
}

/// A bag-algebra plan. A `Merge` node may only appear at the root and turns
/// an annotated result into a sketch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryPlan {
    TableAccess {
        relation: String,
    },
    Select {
        predicate: Predicate,
        input: Box<QueryPlan>,
    },
    Project {
        items: Vec<ProjectItem>,
        input: Box<QueryPlan>,
    },
    /// Cross product when the predicate is `True`.
    Join {
        predicate: Predicate,
        left: Box<QueryPlan>,
        right: Box<QueryPlan>,
    },
    Aggregate {
        group_by: Vec<String>,
        aggregates: Vec<AggCall>,
        input: Box<QueryPlan>,
    },
    TopK {
        k: u64,
        order_by: Vec<SortKey>,
        input: Box<QueryPlan>,
    },
    Merge {
        input: Box<QueryPlan>,
    },
}

/// Resolves base relation schemas while type-checking.
pub trait SchemaLookup {
    fn schema_of(&self, relation: &str) -> Result<Arc<Schema>>;
}

impl<F> SchemaLookup for F
where
    F: Fn(&str) -> Result<Arc<Schema>>,
{
    fn schema_of(&self, relation: &str) -> Result<Arc<Schema>> {
        self(relation)
    }
}

impl SchemaLookup for crate::relation::Database {
    fn schema_of(&self, relation: &str) -> Result<Arc<Schema>> {
        self.schema(relation).cloned()
    }
}

impl QueryPlan {
    pub fn scan(relation: &str) -> Self {
        QueryPlan::TableAccess {
            relation: relation.to_string(),
        }
    }

    pub fn select(self, predicate: Predicate) -> Self {
        QueryPlan::Select {
            predicate,
            input: Box::new(self),
        }
    }

    pub fn project(self, items: Vec<(ScalarExpr, &str)>) -> Self {
        QueryPlan::Project {
            items: items
                .into_iter()
                .map(|(expr, name)| ProjectItem {
                    expr,
                    name: name.to_string(),
                })
                .collect(),
            input: Box::new(self),
        }
    }

    pub fn join(self, right: QueryPlan, predicate: Predicate) -> Self {
        QueryPlan::Join {
            predicate,
            left: Box::new(self),
            right: Box::new(right),
        }
    }

    pub fn aggregate(self, group_by: &[&str], aggregates: Vec<AggCall>) -> Self {
        QueryPlan::Aggregate {
            group_by: group_by.iter().map(|s| s.to_string()).collect(),
            aggregates,
            input: Box::new(self),
        }
    }

    pub fn top_k(self, k: u64, order_by: Vec<SortKey>) -> Self {
        QueryPlan::TopK {
            k,
            order_by,
            input: Box::new(self),
        }
    }

    pub fn merge(self) -> Self {
        QueryPlan::Merge {
            input: Box::new(self),
        }
    }

    pub fn is_merge(&self) -> bool {
        matches!(self, QueryPlan::Merge { .. })
    }

    /// The plan under a root `Merge`, or the plan itself.
    pub fn without_merge(&self) -> &QueryPlan {
        match self {
            QueryPlan::Merge { input } => input,
            other => other,
        }
    }

    pub fn children(&self) -> Vec<&QueryPlan> {
        match self {
            QueryPlan::TableAccess { .. } => Vec::new(),
            QueryPlan::Select { input, .. }
            | QueryPlan::Project { input, .. }
            | QueryPlan::Aggregate { input, .. }
            | QueryPlan::TopK { input, .. }
            | QueryPlan::Merge { input } => vec![input],
            QueryPlan::Join { left, right, .. } => vec![left, right],
        }
    }

    /// Base relations in scan order (duplicates kept).
    pub fn relations(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_relations(&mut out);
        out
    }

    fn collect_relations(&self, out: &mut Vec<String>) {
        if let QueryPlan::TableAccess { relation } = self {
            out.push(relation.clone());
        }
        for c in self.children() {
            c.collect_relations(out);
        }
    }

    pub fn references(&self, relation: &str) -> bool {
        self.relations().iter().any(|r| r == relation)
    }

    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    /// Checks structural rules: at most one `Merge`, and only at the root.
    pub fn validate_structure(&self) -> Result<()> {
        fn no_merge(p: &QueryPlan) -> Result<()> {
            if p.is_merge() {
                return Err(Error::InvalidPlan("merge is only allowed at the root".into()));
            }
            p.children().into_iter().try_for_each(no_merge)
        }
        self.without_merge()
            .children()
            .into_iter()
            .try_for_each(no_merge)?;
        if let QueryPlan::TopK { k: 0, .. } = self.without_merge() {
            return Err(Error::InvalidPlan("top-k requires k >= 1".into()));
        }
        Ok(())
    }

    /// Type-checks the plan and returns its output schema. For a `Merge`
    /// root this is the schema of the merged input.
    pub fn output_schema(&self, lookup: &dyn SchemaLookup) -> Result<Arc<Schema>> {
        self.validate_structure()?;
        self.output_schema_unchecked(lookup)
    }

    pub(crate) fn output_schema_unchecked(&self, lookup: &dyn SchemaLookup) -> Result<Arc<Schema>> {
        match self {
            QueryPlan::TableAccess { relation } => lookup.schema_of(relation),
            QueryPlan::Select { predicate, input } => {
                let schema = input.output_schema_unchecked(lookup)?;
                predicate.type_check(&schema)?;
                Ok(schema)
            }
            QueryPlan::Project { items, input } => {
                let schema = input.output_schema_unchecked(lookup)?;
                let attrs = items
                    .iter()
                    .map(|item| Ok(Attribute::new(&item.name, item.expr.kind(&schema)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Arc::new(Schema::new(format!("π({})", schema.name), attrs)?))
            }
            QueryPlan::Join {
                predicate,
                left,
                right,
            } => {
                let (l, r) = (left.output_schema_unchecked(lookup)?, right.output_schema_unchecked(lookup)?);
                let mut attrs = l.attributes.clone();
                attrs.extend(r.attributes.iter().cloned());
                let schema = Schema::new(format!("{}⋈{}", l.name, r.name), attrs)?;
                predicate.type_check(&schema)?;
                Ok(Arc::new(schema))
            }
            QueryPlan::Aggregate {
                group_by,
                aggregates,
                input,
            } => {
                let schema = input.output_schema_unchecked(lookup)?;
                let mut attrs = Vec::new();
                for g in group_by {
                    attrs.push(schema.attributes[schema.index_of(g)?].clone());
                }
                for a in aggregates {
                    let arg = schema.kind_of(schema.index_of(&a.arg)?);
                    attrs.push(Attribute::new(&a.output, a.func.output_kind(arg)?));
                }
                if aggregates.is_empty() {
                    return Err(Error::InvalidPlan("aggregate without functions".into()));
                }
                Ok(Arc::new(Schema::new(format!("γ({})", schema.name), attrs)?))
            }
            QueryPlan::TopK { k, order_by, input } => {
                if *k == 0 {
                    return Err(Error::InvalidPlan("top-k requires k >= 1".into()));
                }
                let schema = input.output_schema_unchecked(lookup)?;
                for key in order_by {
                    schema.index_of(&key.attr)?;
                }
                Ok(schema)
            }
            QueryPlan::Merge { input } => input.output_schema_unchecked(lookup),
        }
    }
}

impl fmt::Display for QueryPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryPlan::TableAccess { relation } => f.write_str(relation),
            QueryPlan::Select { predicate, input } => write!(f, "σ[{predicate}]({input})"),
            QueryPlan::Project { items, input } => {
                f.write_str("Π[")?;
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{} → {}", it.expr, it.name)?;
                }
                write!(f, "]({input})")
            }
            QueryPlan::Join {
                predicate,
                left,
                right,
            } => write!(f, "({left} ⋈[{predicate}] {right})"),
            QueryPlan::Aggregate {
                group_by,
                aggregates,
                input,
            } => {
                write!(f, "γ[{}; ", group_by.join(","))?;
                for (i, a) in aggregates.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}({}) → {}", a.func.name(), a.arg, a.output)?;
                }
                write!(f, "]({input})")
            }
            QueryPlan::TopK { k, order_by, input } => {
                write!(f, "τ[{k}; ")?;
                for (i, s) in order_by.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{}{}", s.attr, if s.desc { " desc" } else { "" })?;
                }
                write!(f, "]({input})")
            }
            QueryPlan::Merge { input } => write!(f, "μ({input})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relation::Database;
    use crate::relation::BagRelation;

    fn db() -> Database {
        Database::new()
            .with(BagRelation::empty(Arc::new(Schema::of(
                "r",
                &[("a", Kind::I64), ("b", Kind::I64)],
            ))))
            .with(BagRelation::empty(Arc::new(Schema::of(
                "s",
                &[("c", Kind::I64), ("d", Kind::I64), ("name", Kind::Str)],
            ))))
    }

    #[test]
    fn aggregate_schema_is_group_by_then_outputs() {
        let plan = QueryPlan::scan("r").aggregate(&["a"], vec![
            AggCall::new(AggFn::Sum, "b", "sb"),
            AggCall::new(AggFn::Avg, "b", "ab"),
        ]);
        let schema = plan.output_schema(&db()).unwrap();
        let names: Vec<_> = schema.attributes.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["a", "sb", "ab"]);
        assert_eq!(schema.attributes[2].kind, Kind::F64);
    }

    #[test]
    fn comparing_string_with_int_fails_type_check() {
        let plan = QueryPlan::scan("s").select(Predicate::attr_cmp("name", CmpOp::Gt, 5));
        assert!(matches!(plan.output_schema(&db()), Err(Error::TypeMismatch(_))));
    }

    #[test]
    fn unknown_relation_is_reported() {
        let plan = QueryPlan::scan("nope");
        assert!(matches!(plan.output_schema(&db()), Err(Error::UnknownRelation(_))));
    }

    #[test]
    fn merge_below_root_is_rejected() {
        let plan = QueryPlan::scan("r").merge().select(Predicate::True);
        assert!(matches!(plan.output_schema(&db()), Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn join_with_clashing_names_is_rejected() {
        let plan = QueryPlan::scan("r").join(QueryPlan::scan("r"), Predicate::True);
        assert!(plan.output_schema(&db()).is_err());
    }
}
