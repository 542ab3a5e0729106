//! Engine state: operator tree plus merge counts.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sketchd_core::bind::BoundPlan;
use sketchd_core::{
    AnnotatedDelta, AnnotatedDeltaDatabase, PartitionCatalog, QueryPlan, Schema, Sketch,
    SketchDelta, TableSource,
};

use crate::config::BufferConfig;
use crate::error::{EngineError, Result};
use crate::merge::MergeState;
use crate::node::{Ctx, Node};

/// Work counters for the optimizations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    /// Delta rows checked against a bloom filter.
    pub bloom_probes: u64,
    /// Of those, rows passed on to the store.
    pub bloom_forwarded: u64,
    pub store_calls: u64,
    /// Store round trips avoided because every delta row was filtered out.
    pub store_calls_skipped: u64,
}

/// Output delta of one operator during a traced step.
#[derive(Debug, Clone)]
pub struct NodeTrace {
    pub operator: String,
    pub output: AnnotatedDelta,
}

/// Result of a traced maintenance step.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Every operator's output, children before parents.
    pub operators: Vec<NodeTrace>,
    /// Output delta of the node below the merge root.
    pub output: AnnotatedDelta,
    pub sketch_delta: SketchDelta,
}

/// Maintenance state for one sketch.
#[derive(Debug, Clone)]
pub struct EngineState {
    pub(crate) plan: QueryPlan,
    pub(crate) catalog: Arc<PartitionCatalog>,
    pub(crate) config: BufferConfig,
    pub(crate) schemas: BTreeMap<String, Arc<Schema>>,
    pub(crate) root: Node,
    pub(crate) merge: MergeState,
    pub(crate) last_version: u64,
    pub(crate) stats: EngineStats,
}

pub(crate) fn bind(
    plan: &QueryPlan,
    schemas: &BTreeMap<String, Arc<Schema>>,
    catalog: &PartitionCatalog,
    config: &BufferConfig,
) -> Result<Node> {
    config.validate()?;
    if !plan.is_merge() {
        return Err(sketchd_core::Error::InvalidPlan("the plan needs a merge root".into()).into());
    }
    for (name, schema) in schemas {
        if !catalog.contains(name) {
            return Err(sketchd_core::Error::InvalidPartition(format!(
                "no partition for relation {name:?}"
            ))
            .into());
        }
        catalog.resolver(schema)?;
    }
    let lookup = |name: &str| {
        schemas
            .get(name)
            .cloned()
            .ok_or_else(|| sketchd_core::Error::UnknownRelation(name.to_string()))
    };
    let bound = BoundPlan::bind(plan, &lookup)?;
    Node::build(bound.without_merge(), config, catalog.width())
}

/// Builds maintenance state by evaluating the plan over `source`, and returns
/// it with the accurate sketch.
pub fn init_state(
    plan: &QueryPlan,
    source: &dyn TableSource,
    catalog: Arc<PartitionCatalog>,
    config: BufferConfig,
) -> Result<(EngineState, Sketch)> {
    let mut schemas = BTreeMap::new();
    for rel in plan.relations() {
        schemas.insert(rel.clone(), source.schema_of(&rel)?);
    }
    let root = bind(plan, &schemas, &catalog, &config)?;
    let mut state = EngineState {
        plan: plan.clone(),
        merge: MergeState::new(catalog.width()),
        catalog,
        config,
        schemas,
        root,
        last_version: 0,
        stats: EngineStats::default(),
    };
    state.fill(source)?;
    let sketch = state.merge.sketch().clone();
    Ok((state, sketch))
}

impl EngineState {
    fn fill(&mut self, source: &dyn TableSource) -> Result<()> {
        let mut ctx = Ctx {
            source,
            catalog: &self.catalog,
            config: &self.config,
            stats: &mut self.stats,
            trace: None,
        };
        self.root.init(&mut ctx, &mut self.merge)
    }

    /// Maintains the state for a delta. `source` must show the database as
    /// of before the delta. On error the state must be rebuilt.
    pub fn process_delta(&mut self, delta: &AnnotatedDeltaDatabase, source: &dyn TableSource) -> Result<SketchDelta> {
        Ok(self.step(delta, source, false)?.sketch_delta)
    }

    /// Like [`EngineState::process_delta`], also returning every operator's output delta.
    pub fn process_delta_traced(&mut self, delta: &AnnotatedDeltaDatabase, source: &dyn TableSource) -> Result<Trace> {
        self.step(delta, source, true)
    }

    fn step(&mut self, delta: &AnnotatedDeltaDatabase, source: &dyn TableSource, traced: bool) -> Result<Trace> {
        let width = self.catalog.width();
        for d in delta.relations() {
            if let Some(r) = d.rows().iter().find(|r| r.sketch.width() != width) {
                return Err(EngineError::InconsistentDelta(format!(
                    "delta row {} has a sketch over {} fragments, expected {width}",
                    r.tuple,
                    r.sketch.width()
                )));
            }
        }
        let mut ctx = Ctx {
            source,
            catalog: &self.catalog,
            config: &self.config,
            stats: &mut self.stats,
            trace: traced.then(Vec::new),
        };
        let rows = self.root.process(delta, &mut ctx)?;
        let operators = ctx.trace.take().unwrap_or_default();
        let sketch_delta = self.merge.apply(&rows)?;
        Ok(Trace {
            operators,
            output: AnnotatedDelta::new(self.root.schema.clone(), rows),
            sketch_delta,
        })
    }

    /// Rebuilds every operator from `source`, keeping plan and configuration.
    pub fn recapture(&mut self, source: &dyn TableSource) -> Result<Sketch> {
        self.root = bind(&self.plan, &self.schemas, &self.catalog, &self.config)?;
        self.merge = MergeState::new(self.catalog.width());
        self.fill(source)?;
        Ok(self.merge.sketch().clone())
    }

    pub fn sketch(&self) -> &Sketch {
        self.merge.sketch()
    }

    pub fn merge_state(&self) -> &MergeState {
        &self.merge
    }

    pub fn plan(&self) -> &QueryPlan {
        &self.plan
    }

    pub fn catalog(&self) -> &Arc<PartitionCatalog> {
        &self.catalog
    }

    pub fn config(&self) -> &BufferConfig {
        &self.config
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn last_version(&self) -> u64 {
        self.last_version
    }

    pub fn set_last_version(&mut self, v: u64) {
        self.last_version = v;
    }

    /// Schema of the rows the merge root consumes.
    pub fn output_schema(&self) -> &Arc<Schema> {
        &self.root.schema
    }
}
