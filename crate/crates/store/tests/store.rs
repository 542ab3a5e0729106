use std::sync::Arc;

use proptest::prelude::*;
use sketchd_core::annotated::AnnotatedDeltaTuple;
use sketchd_core::bind::JoinKeys;
use sketchd_core::fixtures::{self, new_sale, sales_schema};
use sketchd_core::source::{ChainOp, JoinRequest, OffloadChain, Side};
use sketchd_core::{
    annotate, apply_relation_delta, tuple, BagRelation, CmpOp, DeltaDatabase, DeltaRelation,
    DeltaTuple, FragmentId, Kind, Predicate, Range, Schema, Sketch, TableSource, Tag, Tuple,
};
use sketchd_store::{Store, StoreError};

fn sales_store() -> Store {
    let store = Store::new();
    store.load_relation(&fixtures::sales()).unwrap();
    store
}

fn batch(schema: &Arc<Schema>, rows: Vec<DeltaTuple>) -> DeltaDatabase {
    DeltaDatabase::new().with(DeltaRelation::new(schema.clone(), rows))
}

#[test]
fn initial_load_is_version_zero() {
    let store = sales_store();
    assert_eq!(store.version(), 0);
    assert_eq!(store.scan_snapshot("sales", 0).unwrap(), fixtures::sales());
}

#[test]
fn empty_load_is_valid() {
    let store = Store::new();
    let h = store.create_table(Schema::of("t", &[("x", Kind::I64)])).unwrap();
    store.load_rows(&h, Vec::new()).unwrap();
    assert!(store.scan_snapshot("t", 0).unwrap().is_empty());
}

#[test]
fn duplicate_table_name_is_rejected() {
    let store = sales_store();
    let err = store.create_table((*sales_schema()).clone()).unwrap_err();
    assert!(matches!(err, StoreError::DuplicateName(n) if n == "sales"));
}

#[test]
fn loading_after_a_commit_is_rejected() {
    let store = sales_store();
    store.commit_delta(&DeltaDatabase::new()).unwrap();
    let h = store.handle("sales").unwrap();
    let err = store.load_rows(&h, vec![(new_sale(), 1)]).unwrap_err();
    assert!(matches!(err, StoreError::AlreadyCommitted { version: 1, .. }));
}

#[test]
fn committing_the_new_sale_gives_version_one() {
    let store = sales_store();
    let v = store.commit_delta(&fixtures::new_sale_delta()).unwrap();
    assert_eq!(v, 1);
    assert_eq!(store.scan_snapshot("sales", 0).unwrap().len(), 7);
    let now = store.scan_snapshot("sales", 1).unwrap();
    assert_eq!(now.len(), 8);
    assert_eq!(now.multiplicity(&new_sale()), 1);
}

#[test]
fn empty_commit_still_bumps_the_version() {
    let store = sales_store();
    assert_eq!(store.commit_delta(&DeltaDatabase::new()).unwrap(), 1);
    assert_eq!(store.commit_delta(&batch(&sales_schema(), vec![])).unwrap(), 2);
    assert_eq!(store.scan_snapshot("sales", 2).unwrap(), fixtures::sales());
}

#[test]
fn deleting_an_absent_tuple_is_ill_formed() {
    let store = sales_store();
    let err = store
        .commit_delta(&batch(&sales_schema(), vec![DeltaTuple::delete(new_sale(), 1)]))
        .unwrap_err();
    assert!(matches!(err, StoreError::IllFormedDelta(_)));
    assert_eq!(store.version(), 0);
    let s1 = fixtures::sales_rows()[0].clone();
    let err = store
        .commit_delta(&batch(&sales_schema(), vec![DeltaTuple::delete(s1, 2)]))
        .unwrap_err();
    assert!(matches!(err, StoreError::IllFormedDelta(_)));
}

#[test]
fn failed_commit_leaves_other_tables_untouched() {
    let store = sales_store();
    let t = Arc::new(Schema::of("t", &[("x", Kind::I64)]));
    store.load_relation(&BagRelation::empty(t.clone())).unwrap();
    let mixed = DeltaDatabase::new()
        .with(DeltaRelation::new(t.clone(), vec![DeltaTuple::insert(tuple![1], 1)]))
        .with(DeltaRelation::new(sales_schema(), vec![DeltaTuple::delete(new_sale(), 1)]));
    assert!(store.commit_delta(&mixed).is_err());
    assert!(store.current().scan_table("t").unwrap().is_empty());
}

#[test]
fn unknown_versions_are_reported() {
    let store = sales_store();
    assert!(matches!(
        store.scan_snapshot("sales", 3),
        Err(StoreError::UnknownVersion { requested: 3, current: 0 })
    ));
    assert!(matches!(
        store.extract_delta("sales", 0, 1, None),
        Err(StoreError::UnknownVersion { .. })
    ));
}

#[test]
fn extracting_the_new_sale() {
    let store = sales_store();
    store.commit_delta(&fixtures::new_sale_delta()).unwrap();
    let d = store.extract_delta("sales", 0, 1, None).unwrap();
    assert_eq!(d.rows(), &[DeltaTuple::insert(new_sale(), 1)]);
    assert!(store.extract_delta("sales", 1, 1, None).unwrap().is_empty());
    assert!(store.extract_delta("sales", 0, 0, None).unwrap().is_empty());
}

#[test]
fn extraction_honours_a_pushed_predicate() {
    let store = sales_store();
    let cheap = tuple![9, "Acer", "Aspire 3", 500, 1];
    store
        .commit_delta(&batch(
            &sales_schema(),
            vec![DeltaTuple::insert(new_sale(), 1), DeltaTuple::insert(cheap, 1)],
        ))
        .unwrap();
    let p = Predicate::attr_cmp("price", CmpOp::Gt, 1000);
    let d = store.extract_delta("sales", 0, 1, Some(&p)).unwrap();
    assert_eq!(d.rows(), &[DeltaTuple::insert(new_sale(), 1)]);
}

#[test]
fn insert_then_delete_cancels_in_extraction() {
    let store = sales_store();
    store.commit_delta(&fixtures::new_sale_delta()).unwrap();
    store
        .commit_delta(&batch(&sales_schema(), vec![DeltaTuple::delete(new_sale(), 1)]))
        .unwrap();
    assert!(store.extract_delta("sales", 0, 2, None).unwrap().is_empty());
    assert_eq!(store.extract_delta("sales", 1, 2, None).unwrap().size(), 1);
}

#[test]
fn log_export_lists_every_entry() {
    let store = sales_store();
    store.commit_delta(&fixtures::new_sale_delta()).unwrap();
    let mut out = Vec::new();
    store.export_log_csv("sales", &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "version,tag,multiplicity,id:i64,brand:str,product:str,price:i64,numSold:i64"
    );
    assert_eq!(lines[1], "1,+,1,8,HP,HP ProBook 650 G10,1299,1");
    assert_eq!(lines.len(), 2);
}

#[test]
fn csv_load_into_a_created_table() {
    let store = Store::new();
    let h = store.create_table(Schema::of("t", &[("x", Kind::I64), ("y", Kind::Str)])).unwrap();
    store.load_csv(&h, "x:i64,y:str\n1,a\n1,a\n2,b\n".as_bytes()).unwrap();
    let t = store.scan_snapshot("t", 0).unwrap();
    assert_eq!(t.multiplicity(&tuple![1, "a"]), 2);
    assert!(store.load_csv(&h, "z:i64\n1\n".as_bytes()).is_err());
}

#[test]
fn range_scans_skip_chunks_but_keep_matches() {
    let store = Store::with_chunk_capacity(4);
    let schema = Arc::new(Schema::of("t", &[("x", Kind::I64)]));
    let rel = BagRelation::from_tuples(schema.clone(), (0..40).map(|i| tuple![i]));
    store.load_relation(&rel).unwrap();
    store
        .commit_delta(&batch(
            &schema,
            vec![DeltaTuple::insert(tuple![100], 1), DeltaTuple::delete(tuple![11], 1)],
        ))
        .unwrap();
    let snap = store.current();
    let got = snap.scan_ranges("t", 0, &[Range::closed(10, 13), Range::closed(90, 200)]).unwrap();
    let want = BagRelation::from_tuples(schema, vec![tuple![10], tuple![12], tuple![13], tuple![100]]);
    assert_eq!(got, want);
    assert_eq!(snap.row_count("t").unwrap(), 40);
}

fn rs_store() -> Store {
    let store = Store::new();
    for rel in fixtures::rs_db().relations() {
        store.load_relation(rel).unwrap();
    }
    store
}

fn joined_schema() -> Schema {
    Schema::of("rs", &[("a", Kind::I64), ("b", Kind::I64), ("c", Kind::I64), ("d", Kind::I64)])
}

#[test]
fn delta_joins_with_the_stored_table() {
    let store = rs_store();
    let catalog = fixtures::rs_catalog();
    let keys = JoinKeys::bind(&Predicate::attr_eq("b", "d"), &fixtures::r_schema(), &fixtures::s_schema(), &joined_schema()).unwrap();
    let chain = OffloadChain {
        relation: "s".into(),
        base_schema: fixtures::s_schema(),
        ops: Vec::new(),
    };
    let delta = vec![AnnotatedDeltaTuple::new(Tag::Insert, tuple![5, 8], Sketch::singleton(4, FragmentId(0)), 1)];
    let req = JoinRequest { chain: &chain, delta: &delta, delta_side: Side::Left, keys: &keys, catalog: &catalog };
    let out = store.snapshot(0).unwrap().join_delta(&req).unwrap();
    assert_eq!(
        out,
        vec![AnnotatedDeltaTuple::new(
            Tag::Insert,
            tuple![5, 8, 7, 8],
            Sketch::from_ids(4, [FragmentId(0), FragmentId(3)]),
            1
        )]
    );
    let req = JoinRequest { delta: &[], ..req };
    assert!(store.current().join_delta(&req).unwrap().is_empty());
}

#[test]
fn joined_multiplicities_multiply() {
    let store = Store::new();
    let r = fixtures::r_schema();
    let s = fixtures::s_schema();
    store.load_relation(&BagRelation::from_counts(s.clone(), vec![(tuple![7, 8], 3)])).unwrap();
    let catalog = fixtures::rs_catalog();
    let keys = JoinKeys::bind(&Predicate::attr_eq("b", "d"), &r, &s, &joined_schema()).unwrap();
    let chain = OffloadChain { relation: "s".into(), base_schema: s, ops: Vec::new() };
    let delta = vec![AnnotatedDeltaTuple::new(Tag::Delete, tuple![5, 8], Sketch::singleton(4, FragmentId(0)), 2)];
    let req = JoinRequest { chain: &chain, delta: &delta, delta_side: Side::Left, keys: &keys, catalog: &catalog };
    let out = store.current().join_delta(&req).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].multiplicity, 6);
    assert_eq!(out[0].tag, Tag::Delete);
}

#[test]
fn concurrent_readers_see_whole_commits() {
    let store = Arc::new(Store::new());
    let schema = Arc::new(Schema::of("t", &[("x", Kind::I64)]));
    store.load_relation(&BagRelation::empty(schema.clone())).unwrap();
    let writer = {
        let store = store.clone();
        let schema = schema.clone();
        std::thread::spawn(move || {
            for i in 0..200 {
                let b = batch(&schema, vec![DeltaTuple::insert(tuple![i], 1), DeltaTuple::insert(tuple![-i - 1], 1)]);
                store.commit_delta(&b).unwrap();
            }
        })
    };
    let readers: Vec<_> = (0..2)
        .map(|_| {
            let store = store.clone();
            std::thread::spawn(move || {
                for _ in 0..200 {
                    let snap = store.current();
                    let n = snap.scan_table("t").unwrap().len();
                    assert_eq!(n, 2 * snap.version());
                }
            })
        })
        .collect();
    writer.join().unwrap();
    for r in readers {
        r.join().unwrap();
    }
    assert_eq!(store.version(), 200);
}

// Random histories over a two-column table with small domains.

#[derive(Debug, Clone)]
enum Step {
    Insert(i64, i64, u64),
    Delete(usize, u64),
}

type History = (Vec<(i64, i64, u64)>, Vec<Vec<Step>>);

fn arb_history() -> impl Strategy<Value = History> {
    let row = (0i64..5, 0i64..5, 1u64..3);
    let step = prop_oneof![
        (0i64..5, 0i64..5, 1u64..3).prop_map(|(a, b, n)| Step::Insert(a, b, n)),
        (0usize..64, 1u64..3).prop_map(|(i, n)| Step::Delete(i, n)),
    ];
    (
        prop::collection::vec(row, 0..12),
        prop::collection::vec(prop::collection::vec(step, 0..5), 1..6),
    )
}

fn table_schema() -> Arc<Schema> {
    Arc::new(Schema::of("t", &[("a", Kind::I64), ("b", Kind::I64)]))
}

/// Replays a history and returns the store plus the state after each version.
fn replay(base: &[(i64, i64, u64)], batches: &[Vec<Step>], capacity: usize) -> (Store, Vec<BagRelation>) {
    let schema = table_schema();
    let store = Store::with_chunk_capacity(capacity);
    let rel = BagRelation::from_counts(schema.clone(), base.iter().map(|(a, b, n)| (tuple![*a, *b], *n)));
    store.load_relation(&rel).unwrap();
    let mut states = vec![rel];
    for steps in batches {
        let current = states.last().unwrap().clone();
        let rows: Vec<(Tuple, u64)> = current.rows().to_vec();
        let mut delta = Vec::new();
        let mut taken: std::collections::HashMap<Tuple, u64> = Default::default();
        for s in steps {
            match s {
                Step::Insert(a, b, n) => delta.push(DeltaTuple::insert(tuple![*a, *b], *n)),
                Step::Delete(i, n) if !rows.is_empty() => {
                    let (t, have) = &rows[i % rows.len()];
                    let used = taken.entry(t.clone()).or_insert(0);
                    let n = (*n).min(have - *used);
                    if n > 0 {
                        *used += n;
                        delta.push(DeltaTuple::delete(t.clone(), n));
                    }
                }
                Step::Delete(..) => {}
            }
        }
        let d = DeltaRelation::new(schema.clone(), delta);
        store.commit_delta(&DeltaDatabase::new().with(d.clone())).unwrap();
        states.push(apply_relation_delta(&current, &d).unwrap());
    }
    (store, states)
}

proptest! {
    #[test]
    fn scans_match_the_folded_history((base, batches) in arb_history(), cap in 1usize..5) {
        let (store, states) = replay(&base, &batches, cap);
        for (v, want) in states.iter().enumerate() {
            prop_assert_eq!(&store.scan_snapshot("t", v as u64).unwrap(), want);
            let snap = store.snapshot(v as u64).unwrap();
            let rows: Vec<(Tuple, u64)> = snap.batches("t").unwrap().iter().flat_map(|b| b.rows().collect::<Vec<_>>()).collect();
            prop_assert_eq!(&BagRelation::from_counts(table_schema(), rows), want);
            prop_assert_eq!(snap.row_count("t").unwrap(), want.len());
        }
    }

    #[test]
    fn extracted_deltas_bridge_versions((base, batches) in arb_history()) {
        let (store, states) = replay(&base, &batches, 3);
        let n = states.len() as u64;
        for v1 in 0..n {
            for v2 in v1..n {
                let d = store.extract_delta("t", v1, v2, None).unwrap();
                let applied = apply_relation_delta(&states[v1 as usize], &d).unwrap();
                prop_assert_eq!(&applied, &states[v2 as usize]);
                if v1 == v2 {
                    prop_assert!(d.is_empty());
                }
            }
        }
    }

    #[test]
    fn extraction_composes((base, batches) in arb_history()) {
        let (store, states) = replay(&base, &batches, 2);
        let last = states.len() as u64 - 1;
        let mid = last / 2;
        let mut rows = store.extract_delta("t", 0, mid, None).unwrap().into_rows();
        rows.extend(store.extract_delta("t", mid, last, None).unwrap().into_rows());
        let composed = DeltaRelation::new(table_schema(), rows).net();
        prop_assert_eq!(composed, store.extract_delta("t", 0, last, None).unwrap());
    }

    #[test]
    fn offloaded_join_matches_in_memory_join(
        (base, batches) in arb_history(),
        delta in prop::collection::vec((0i64..5, 0i64..5, 1u64..3, any::<bool>()), 0..6),
        filter in any::<bool>(),
    ) {
        let (store, states) = replay(&base, &batches, 2);
        let at = (states.len() - 1) as u64;
        let table = table_schema();
        let left = Arc::new(Schema::of("l", &[("x", Kind::I64), ("y", Kind::I64)]));
        let joined = Schema::of("j", &[("x", Kind::I64), ("y", Kind::I64), ("a", Kind::I64), ("b", Kind::I64)]);
        let catalog = sketchd_core::PartitionCatalog::new(vec![sketchd_core::Partition::Ranges(
            sketchd_core::RangePartition::from_boundaries("t", "a", vec![0i64.into(), 2i64.into(), 4i64.into()]).unwrap(),
        )]).unwrap();
        let keys = JoinKeys::bind(&Predicate::attr_eq("y", "a"), &left, &table, &joined).unwrap();
        let mut ops = Vec::new();
        if filter {
            ops.push(ChainOp::Select(sketchd_core::bind::BoundPredicate::bind(&Predicate::attr_cmp("b", CmpOp::Lt, 3), &table).unwrap()));
        }
        let chain = OffloadChain { relation: "t".into(), base_schema: table.clone(), ops };
        let rows: Vec<AnnotatedDeltaTuple> = delta
            .iter()
            .map(|(x, y, n, ins)| AnnotatedDeltaTuple::new(
                if *ins { Tag::Insert } else { Tag::Delete },
                tuple![*x, *y],
                catalog.empty_sketch(),
                *n,
            ))
            .collect();
        let req = JoinRequest { chain: &chain, delta: &rows, delta_side: Side::Left, keys: &keys, catalog: &catalog };
        let got = store.snapshot(at).unwrap().join_delta(&req).unwrap();

        let annotated = annotate(&states[at as usize], &catalog).unwrap();
        let mut want = Vec::new();
        for d in &rows {
            for r in annotated.rows() {
                if filter && !(r.tuple.values()[1] < 3i64.into()) {
                    continue;
                }
                if d.tuple.values()[1] == r.tuple.values()[0] {
                    want.push(AnnotatedDeltaTuple::new(d.tag, d.tuple.concat(&r.tuple), d.sketch.union(&r.sketch), d.multiplicity * r.multiplicity));
                }
            }
        }
        let key = |v: &Vec<AnnotatedDeltaTuple>| {
            let mut m: std::collections::BTreeMap<(char, Tuple, Sketch), u64> = Default::default();
            for d in v {
                *m.entry((d.tag.symbol(), d.tuple.clone(), d.sketch.clone())).or_insert(0) += d.multiplicity;
            }
            m
        };
        prop_assert_eq!(key(&got), key(&want));
    }
}
