//! Selection push-down into delta extraction.

use std::collections::BTreeMap;

use sketchd_core::{Predicate, QueryPlan, ScalarExpr};

/// Predicates over base-table attributes that every relevant delta row must
/// satisfy. Rows failing them cannot change the query result.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PushdownPlan {
    pub predicates: BTreeMap<String, Predicate>,
    /// Whether each occurrence of the relation reaches a selection through
    /// stateless operators only.
    pub stateless: BTreeMap<String, bool>,
}

impl PushdownPlan {
    pub fn predicate(&self, relation: &str) -> Option<&Predicate> {
        self.predicates.get(relation)
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }
}

type Mapping = BTreeMap<String, ScalarExpr>;

/// A stateless chain down to a scan, with its selections rewritten over base attributes.
fn chain(plan: &QueryPlan) -> Option<(String, Vec<Predicate>, Option<Mapping>)> {
    match plan {
        QueryPlan::TableAccess { relation } => Some((relation.clone(), Vec::new(), None)),
        QueryPlan::Select { predicate, input } => {
            let (rel, mut preds, mapping) = chain(input)?;
            preds.push(rewrite(predicate, mapping.as_ref()));
            Some((rel, preds, mapping))
        }
        QueryPlan::Project { items, input } => {
            let (rel, preds, mapping) = chain(input)?;
            let next = items
                .iter()
                .map(|it| {
                    let e = match &mapping {
                        None => it.expr.clone(),
                        Some(m) => it.expr.substitute(&|a| m.get(a).cloned()),
                    };
                    (it.name.clone(), e)
                })
                .collect();
            Some((rel, preds, Some(next)))
        }
        _ => None,
    }
}

fn rewrite(p: &Predicate, mapping: Option<&Mapping>) -> Predicate {
    match mapping {
        None => p.clone(),
        Some(m) => p.substitute(&|a| m.get(a).cloned()),
    }
}

fn collect(plan: &QueryPlan, out: &mut BTreeMap<String, Vec<Vec<Predicate>>>) {
    if let Some((rel, preds, _)) = chain(plan) {
        out.entry(rel).or_default().push(preds);
        return;
    }
    for c in plan.children() {
        collect(c, out);
    }
}

/// Finds, per base relation, a predicate implied by all selections reachable
/// from its scans through stateless operators. A relation read more than once
/// gets the disjunction of its occurrences, and none if any occurrence is unfiltered.
pub fn plan_pushdown(plan: &QueryPlan) -> PushdownPlan {
    let mut occurrences = BTreeMap::new();
    collect(plan, &mut occurrences);
    let mut out = PushdownPlan::default();
    for (rel, occ) in occurrences {
        let filtered = occ.iter().all(|p| !p.is_empty());
        out.stateless.insert(rel.clone(), filtered);
        if filtered {
            let p = Predicate::or(occ.into_iter().map(Predicate::and).collect());
            if p != Predicate::True {
                out.predicates.insert(rel, p);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use sketchd_core::{AggCall, AggFn, CmpOp};

    #[test]
    fn selection_over_scan_is_pushed() {
        let plan = QueryPlan::scan("t")
            .select(Predicate::attr_cmp("b", CmpOp::Lt, 1000))
            .aggregate(&["a"], vec![AggCall::new(AggFn::Sum, "b", "s")])
            .merge();
        let p = plan_pushdown(&plan);
        assert_eq!(p.predicate("t"), Some(&Predicate::attr_cmp("b", CmpOp::Lt, 1000)));
    }

    #[test]
    fn having_is_not_pushed() {
        let plan = QueryPlan::scan("t")
            .aggregate(&["a"], vec![AggCall::new(AggFn::Sum, "b", "s")])
            .select(Predicate::attr_cmp("s", CmpOp::Gt, 5))
            .merge();
        assert!(plan_pushdown(&plan).is_empty());
        assert!(plan_pushdown(&QueryPlan::scan("t").merge()).is_empty());
    }

    #[test]
    fn projections_are_substituted() {
        let plan = QueryPlan::scan("t")
            .project(vec![(ScalarExpr::attr("a").add(ScalarExpr::attr("b")), "c")])
            .select(Predicate::attr_cmp("c", CmpOp::Gt, 3))
            .merge();
        let p = plan_pushdown(&plan);
        assert_eq!(
            p.predicate("t"),
            Some(&Predicate::cmp(
                ScalarExpr::attr("a").add(ScalarExpr::attr("b")),
                CmpOp::Gt,
                ScalarExpr::constant(3)
            ))
        );
    }

    #[test]
    fn self_join_needs_every_occurrence_filtered() {
        let left = QueryPlan::scan("t").select(Predicate::attr_cmp("a", CmpOp::Gt, 3));
        let plan = left.clone().join(QueryPlan::scan("t"), Predicate::True).merge();
        assert!(plan_pushdown(&plan).is_empty());
        let both = left
            .join(QueryPlan::scan("t").select(Predicate::attr_cmp("a", CmpOp::Lt, 1)), Predicate::True)
            .merge();
        assert_eq!(
            plan_pushdown(&both).predicate("t"),
            Some(&Predicate::or(vec![
                Predicate::attr_cmp("a", CmpOp::Gt, 3),
                Predicate::attr_cmp("a", CmpOp::Lt, 1)
            ]))
        );
    }
}
