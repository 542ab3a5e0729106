use proptest::prelude::*;
use sketchd_core::fixtures::{
    new_sale_delta, price_catalog, q_all_rules, q_top, rs_catalog, rs_db, rs_delta, r_schema, s_schema, sales_db,
    sales_rows, sales_schema,
};
use sketchd_core::{
    apply_annotated_delta, apply_delta, capture, delta_tuples_in, eval, eval_annotated, sketch_instance, tuple,
    AggCall, AggFn, AnnotatedDatabase, AnnotatedDeltaDatabase, BagRelation, CmpOp, Database, DeltaDatabase,
    DeltaRelation, DeltaTuple, FragmentId, Predicate, QueryPlan, ScalarExpr, Sketch, SortKey, Tuple,
};

fn ids(width: u32, ids: &[u32]) -> Sketch {
    Sketch::from_ids(width, ids.iter().copied().map(FragmentId))
}

#[test]
fn running_example_sketch() {
    let catalog = price_catalog();
    let plan = q_top().merge();
    let before = capture(&plan, &sales_db(), &catalog).unwrap();
    assert_eq!(before, ids(4, &[2, 3]));

    let instance = sketch_instance(&before, &sales_db(), &catalog).unwrap();
    let expected = BagRelation::from_tuples(sales_schema(), sales_rows()[2..5].to_vec());
    assert_eq!(instance.get("sales").unwrap(), &expected);
    assert_eq!(eval(&q_top(), &instance).unwrap(), eval(&q_top(), &sales_db()).unwrap());

    let after = apply_delta(&sales_db(), &new_sale_delta()).unwrap();
    assert_eq!(capture(&plan, &after, &catalog).unwrap(), ids(4, &[1, 2, 3]));
}

#[test]
fn join_aggregate_having_sketch() {
    let catalog = rs_catalog();
    assert_eq!(capture(&q_all_rules(), &rs_db(), &catalog).unwrap(), ids(4, &[1, 2]));
    let after = apply_delta(&rs_db(), &rs_delta()).unwrap();
    assert_eq!(capture(&q_all_rules(), &after, &catalog).unwrap(), ids(4, &[0, 1, 2, 3]));
}

fn rows() -> impl Strategy<Value = Vec<(i64, i64)>> {
    prop::collection::vec((1i64..=10, 1i64..=10), 0..12)
}

fn db(r: &[(i64, i64)], s: &[(i64, i64)]) -> Database {
    let tuples = |v: &[(i64, i64)]| v.iter().map(|&(x, y)| tuple![x, y]).collect::<Vec<Tuple>>();
    Database::new()
        .with(BagRelation::from_tuples(r_schema(), tuples(r)))
        .with(BagRelation::from_tuples(s_schema(), tuples(s)))
}

fn plans() -> Vec<QueryPlan> {
    vec![
        QueryPlan::scan("r").select(Predicate::attr_cmp("b", CmpOp::Ge, 4)),
        QueryPlan::scan("r").project(vec![(ScalarExpr::attr("a").add(ScalarExpr::attr("b")), "ab")]),
        QueryPlan::scan("r").join(QueryPlan::scan("s"), Predicate::attr_eq("b", "d")),
        QueryPlan::scan("s").aggregate(
            &["d"],
            vec![AggCall::new(AggFn::Sum, "c", "sc"), AggCall::new(AggFn::Min, "c", "lo")],
        ),
        QueryPlan::scan("r").top_k(3, vec![SortKey::desc("a"), SortKey::asc("b")]),
        q_all_rules().without_merge().clone(),
    ]
}

/// Plans whose accurate sketch reproduces the full result.
fn safe_plans() -> Vec<QueryPlan> {
    vec![
        QueryPlan::scan("r").select(Predicate::attr_cmp("a", CmpOp::Lt, 6)),
        QueryPlan::scan("r").join(QueryPlan::scan("s"), Predicate::attr_eq("a", "c")),
        q_all_rules().without_merge().clone(),
        QueryPlan::scan("s")
            .aggregate(&["d"], vec![AggCall::new(AggFn::Max, "c", "hi")])
            .select(Predicate::attr_cmp("hi", CmpOp::Gt, 5)),
    ]
}

fn delta(ins: &[(i64, i64)], del: &[(i64, i64)]) -> DeltaDatabase {
    let mut v: Vec<DeltaTuple> = ins.iter().map(|&(x, y)| DeltaTuple::insert(tuple![x, y], 1)).collect();
    v.extend(del.iter().map(|&(x, y)| DeltaTuple::delete(tuple![x, y], 1)));
    DeltaDatabase::new().with(DeltaRelation::new(r_schema(), v))
}

proptest! {
    #[test]
    fn annotated_evaluation_agrees_with_plain(r in rows(), s in rows()) {
        let db = db(&r, &s);
        let catalog = rs_catalog();
        let adb = AnnotatedDatabase::annotate(&db, &catalog).unwrap();
        for plan in plans() {
            let annotated = eval_annotated(&plan, &adb, catalog.width()).unwrap().into_relation().unwrap();
            prop_assert_eq!(sketchd_core::tuples_in(&annotated), eval(&plan, &db).unwrap());
        }
    }

    #[test]
    fn sketch_instance_reproduces_result(r in rows(), s in rows()) {
        let db = db(&r, &s);
        let catalog = rs_catalog();
        for plan in safe_plans() {
            let sketch = capture(&plan.clone().merge(), &db, &catalog).unwrap();
            let instance = sketch_instance(&sketch, &db, &catalog).unwrap();
            prop_assert_eq!(eval(&plan, &instance).unwrap(), eval(&plan, &db).unwrap());
        }
    }

    #[test]
    fn annotation_commutes_with_updates(r in rows(), s in rows(), ins in rows(), pick in prop::collection::vec(any::<prop::sample::Index>(), 0..4)) {
        let db = db(&r, &s);
        let mut left = r.clone();
        let del: Vec<(i64, i64)> = pick.iter().take(r.len()).map(|i| left.swap_remove(i.index(left.len()))).collect();
        let d = delta(&ins, &del);
        let catalog = rs_catalog();
        let rel = AnnotatedDatabase::annotate(&db, &catalog).unwrap();
        let ad = AnnotatedDeltaDatabase::annotate(&d, &catalog).unwrap();
        let ar = ad.get("r").unwrap();
        prop_assert_eq!(delta_tuples_in(ar), d.get("r").unwrap().clone());
        let merged = apply_annotated_delta(rel.get("r").unwrap(), ar).unwrap();
        let after = apply_delta(&db, &d).unwrap();
        prop_assert_eq!(sketchd_core::tuples_in(&merged), after.get("r").unwrap().clone());
        let direct = AnnotatedDatabase::annotate(&after, &catalog).unwrap();
        prop_assert_eq!(merged.sorted(), direct.get("r").unwrap().sorted());
    }

    #[test]
    fn sketches_grow_with_the_database(r in rows(), s in rows(), extra in rows()) {
        let small = db(&r, &s);
        let mut all = r.clone();
        all.extend(extra);
        let big = db(&all, &s);
        let catalog = rs_catalog();
        let plan = QueryPlan::scan("r")
            .join(QueryPlan::scan("s"), Predicate::attr_eq("b", "d"))
            .merge();
        let a = capture(&plan, &small, &catalog).unwrap();
        let b = capture(&plan, &big, &catalog).unwrap();
        prop_assert!(a.is_subset(&b));
    }
}
