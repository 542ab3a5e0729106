//! Small example datasets and queries shared by tests, benches and demos.

use std::sync::Arc;

use crate::partition::{Partition, PartitionCatalog, RangePartition};
use crate::plan::{AggCall, AggFn, CmpOp, Predicate, QueryPlan, ScalarExpr};
use crate::relation::{BagRelation, Database, DeltaDatabase, DeltaRelation, DeltaTuple, Schema};
use crate::tuple;
use crate::value::{Kind, Tuple, Value};

pub fn sales_schema() -> Arc<Schema> {
    Arc::new(Schema::of(
        "sales",
        &[
            ("id", Kind::I64),
            ("brand", Kind::Str),
            ("product", Kind::Str),
            ("price", Kind::I64),
            ("numSold", Kind::I64),
        ],
    ))
}

/// Rows s1 to s7.
pub fn sales_rows() -> Vec<Tuple> {
    vec![
        tuple![1, "Lenovo", "ThinkPad T14s Gen 2", 349, 1],
        tuple![2, "Lenovo", "ThinkPad T14s Gen 2", 449, 2],
        tuple![3, "Apple", "MacBook Air 13-inch", 1199, 1],
        tuple![4, "Apple", "MacBook Pro 14-inch", 3875, 1],
        tuple![5, "Dell", "Dell XPS 13 Laptop", 1345, 1],
        tuple![6, "HP", "HP ProBook 450 G9", 999, 4],
        tuple![7, "HP", "HP ProBook 550 G9", 899, 1],
    ]
}

/// The new sale s8.
pub fn new_sale() -> Tuple {
    tuple![8, "HP", "HP ProBook 650 G10", 1299, 1]
}

pub fn sales() -> BagRelation {
    BagRelation::from_tuples(sales_schema(), sales_rows())
}

pub fn sales_db() -> Database {
    Database::new().with(sales())
}

pub fn new_sale_delta() -> DeltaDatabase {
    DeltaDatabase::new().with(DeltaRelation::new(
        sales_schema(),
        vec![DeltaTuple::insert(new_sale(), 1)],
    ))
}

/// Brands whose total revenue exceeds 5000.
pub fn q_top() -> QueryPlan {
    QueryPlan::scan("sales")
        .project(vec![
            (ScalarExpr::attr("brand"), "brand"),
            (ScalarExpr::attr("price").mul(ScalarExpr::attr("numSold")), "rev_row"),
        ])
        .aggregate(&["brand"], vec![AggCall::new(AggFn::Sum, "rev_row", "rev")])
        .select(Predicate::attr_cmp("rev", CmpOp::Gt, 5000))
}

fn ints(b: &[i64]) -> Vec<Value> {
    b.iter().copied().map(Value::I64).collect()
}

/// Price ranges [1,600], [601,1000], [1001,1500], [1501,10000].
pub fn price_partition() -> RangePartition {
    RangePartition::from_boundaries("sales", "price", ints(&[1, 601, 1001, 1501, 10000]))
        .expect("valid boundaries")
}

pub fn price_catalog() -> PartitionCatalog {
    PartitionCatalog::new(vec![Partition::Ranges(price_partition())]).expect("valid catalog")
}

pub fn r_schema() -> Arc<Schema> {
    Arc::new(Schema::of("r", &[("a", Kind::I64), ("b", Kind::I64)]))
}

pub fn s_schema() -> Arc<Schema> {
    Arc::new(Schema::of("s", &[("c", Kind::I64), ("d", Kind::I64)]))
}

/// R(a, b) = {(1,2), (6,3)} and S(c, d) = {(6,3), (7,8)}.
pub fn rs_db() -> Database {
    Database::new()
        .with(BagRelation::from_tuples(r_schema(), vec![tuple![1, 2], tuple![6, 3]]))
        .with(BagRelation::from_tuples(s_schema(), vec![tuple![6, 3], tuple![7, 8]]))
}

/// R on a with [1,5], [6,10]; S on c with [1,6], [7,10].
pub fn rs_catalog() -> PartitionCatalog {
    PartitionCatalog::new(vec![
        Partition::Ranges(RangePartition::from_boundaries("r", "a", ints(&[1, 6, 10])).expect("valid")),
        Partition::Ranges(RangePartition::from_boundaries("s", "c", ints(&[1, 7, 10])).expect("valid")),
    ])
    .expect("valid catalog")
}

/// σ_{sc>5}(γ_{a; sum(c)→sc}(σ_{a>3}(R) ⋈_{b=d} S)) with a merge root.
pub fn q_all_rules() -> QueryPlan {
    QueryPlan::scan("r")
        .select(Predicate::attr_cmp("a", CmpOp::Gt, 3))
        .join(QueryPlan::scan("s"), Predicate::attr_eq("b", "d"))
        .aggregate(&["a"], vec![AggCall::new(AggFn::Sum, "c", "sc")])
        .select(Predicate::attr_cmp("sc", CmpOp::Gt, 5))
        .merge()
}

/// ΔR = {+(5,8)}.
pub fn rs_delta() -> DeltaDatabase {
    DeltaDatabase::new().with(DeltaRelation::new(r_schema(), vec![DeltaTuple::insert(tuple![5, 8], 1)]))
}
