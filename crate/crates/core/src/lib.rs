//! Bag relational algebra with range-partition provenance sketches.
//!
//! This crate holds the data model shared by the rest of the workspace:
//! values and relations, query plans, plain and sketch-annotated evaluation,
//! range partitions and sketches.

pub mod annotated;
pub mod bind;
pub mod columnar;
pub mod csv_io;
pub mod error;
pub mod eval;
pub mod exec;
pub mod fixtures;
pub mod partition;
pub mod plan;
pub mod relation;
pub mod sketch;
pub mod source;
pub mod value;

pub use annotated::{
    apply_annotated_delta, capture, delta_frags_in, delta_tuples_in, eval_annotated, frag_set,
    frags_in, tuples_in, AnnotatedDatabase, AnnotatedDelta, AnnotatedDeltaDatabase,
    AnnotatedDeltaTuple, AnnotatedOutput, AnnotatedRelation, AnnotatedTuple,
};
pub use columnar::{ChainOutput, ColumnBatch, ColumnData};
pub use error::{Error, Result};
pub use eval::eval;
pub use partition::{
    annotate, annotate_delta, sketch_instance, Partition, PartitionCatalog, PartitionSpec, Range,
    RangeFilter, RangePartition,
};
pub use plan::{AggCall, AggFn, CmpOp, Predicate, ProjectItem, QueryPlan, ScalarExpr, SortKey};
pub use relation::{
    apply_delta, apply_relation_delta, diff, diff_relation, Attribute, BagRelation, Database,
    DeltaDatabase, DeltaRelation, DeltaTuple, Schema, Tag,
};
pub use sketch::{sketch_apply_delta, FragmentId, Sketch, SketchDelta};
pub use source::TableSource;
pub use value::{Kind, Tuple, Value};
