//! Query instrumentation: restricting base-table access to a sketch's ranges.

use sketchd_core::{eval, BagRelation, Database, PartitionCatalog, QueryPlan, RangeFilter, Sketch};
use sketchd_store::Snapshot;

use crate::error::{ManagerError, Result};

/// Adds a selection on the sketch's ranges directly above every scan of a
/// partitioned relation. Scans the sketch keeps whole are left alone.
pub fn instrument_query(plan: &QueryPlan, sketch: &Sketch, catalog: &PartitionCatalog) -> Result<QueryPlan> {
    if sketch.is_empty() {
        return Err(ManagerError::EmptySketch);
    }
    rewrite(plan.without_merge(), sketch, catalog)
}

fn rewrite(plan: &QueryPlan, sketch: &Sketch, catalog: &PartitionCatalog) -> Result<QueryPlan> {
    let sub = |p: &QueryPlan| rewrite(p, sketch, catalog).map(Box::new);
    Ok(match plan {
        QueryPlan::TableAccess { relation } => {
            if !catalog.contains(relation) {
                return Ok(plan.clone());
            }
            match catalog.range_filter(sketch, relation)? {
                RangeFilter::All => plan.clone(),
                f => plan.clone().select(f.to_predicate()),
            }
        }
        QueryPlan::Select { predicate, input } => QueryPlan::Select {
            predicate: predicate.clone(),
            input: sub(input)?,
        },
        QueryPlan::Project { items, input } => QueryPlan::Project {
            items: items.clone(),
            input: sub(input)?,
        },
        QueryPlan::Join { predicate, left, right } => QueryPlan::Join {
            predicate: predicate.clone(),
            left: sub(left)?,
            right: sub(right)?,
        },
        QueryPlan::Aggregate {
            group_by,
            aggregates,
            input,
        } => QueryPlan::Aggregate {
            group_by: group_by.clone(),
            aggregates: aggregates.clone(),
            input: sub(input)?,
        },
        QueryPlan::TopK { k, order_by, input } => QueryPlan::TopK {
            k: *k,
            order_by: order_by.clone(),
            input: sub(input)?,
        },
        QueryPlan::Merge { input } => QueryPlan::Merge { input: sub(input)? },
    })
}

/// Reads only the fragments a sketch selects, pruning chunks by zone map.
pub fn sketch_scan(snapshot: &Snapshot, plan: &QueryPlan, sketch: &Sketch, catalog: &PartitionCatalog) -> Result<Database> {
    let mut db = Database::new();
    for rel in plan.relations() {
        if !catalog.contains(&rel) {
            db.insert(snapshot.scan_table(&rel)?);
            continue;
        }
        let data = match catalog.range_filter(sketch, &rel)? {
            RangeFilter::All => snapshot.scan_table(&rel)?,
            RangeFilter::Nothing => BagRelation::empty(sketchd_core::TableSource::schema_of(snapshot, &rel)?),
            RangeFilter::Ranges { attribute, ranges } => {
                let schema = sketchd_core::TableSource::schema_of(snapshot, &rel)?;
                snapshot.scan_ranges(&rel, schema.index_of(&attribute)?, &ranges)?
            }
        };
        db.insert(data);
    }
    Ok(db)
}

/// Evaluates `plan` over the part of `snapshot` the sketch selects. An empty
/// sketch evaluates over empty tables.
pub fn eval_instrumented(snapshot: &Snapshot, plan: &QueryPlan, sketch: &Sketch, catalog: &PartitionCatalog) -> Result<BagRelation> {
    let db = sketch_scan(snapshot, plan, sketch, catalog)?;
    let q = match instrument_query(plan, sketch, catalog) {
        Ok(q) => q,
        Err(ManagerError::EmptySketch) => plan.without_merge().clone(),
        Err(e) => return Err(e),
    };
    Ok(eval(&q, &db)?)
}
