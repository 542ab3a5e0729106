//! The operator tree below the merge root.

use std::collections::HashMap;
use std::hash::Hash;
use std::iter;
use std::sync::Arc;

use sketchd_core::bind::{BoundExpr, BoundNode, BoundPlan, BoundPredicate};
use sketchd_core::exec;
use sketchd_core::source::{ChainOp, OffloadChain};
use sketchd_core::{
    AnnotatedDelta, AnnotatedDeltaDatabase, AnnotatedDeltaTuple, AnnotatedTuple, ChainOutput, FragmentId,
    PartitionCatalog, Schema, Sketch, TableSource, Tuple, Value,
};

use crate::aggregate::{AggNode, Group};
use crate::config::BufferConfig;
use crate::error::Result;
use crate::join::{JoinNode, JoinSide, Materialized};
use crate::merge::MergeState;
use crate::state::{EngineStats, NodeTrace};
use crate::topk::TopKNode;

pub(crate) struct Ctx<'a> {
    pub source: &'a dyn TableSource,
    pub catalog: &'a PartitionCatalog,
    pub config: &'a BufferConfig,
    pub stats: &'a mut EngineStats,
    pub trace: Option<Vec<NodeTrace>>,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Scan { relation: String },
    Select { predicate: BoundPredicate, input: Box<Node> },
    Project { exprs: Vec<BoundExpr>, input: Box<Node> },
    Join { join: JoinNode, left: Box<Node>, right: Box<Node> },
    Aggregate { agg: AggNode, input: Box<Node> },
    TopK { topk: TopKNode, input: Box<Node> },
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub schema: Arc<Schema>,
    pub op: Op,
}

/// Chain output over one base batch with per-base-row fragment and multiplicity.
struct Part {
    chain: ChainOutput,
    frags: Arc<Vec<u32>>,
    mults: Arc<Vec<u64>>,
}

impl Part {
    fn rows(&self, width: u32) -> Vec<AnnotatedTuple> {
        (0..self.chain.len())
            .map(|i| {
                let o = self.chain.origin[i] as usize;
                AnnotatedTuple {
                    tuple: self.chain.row(i),
                    sketch: Sketch::singleton(width, FragmentId(self.frags[o])),
                    multiplicity: self.mults[o],
                }
            })
            .collect()
    }
}

/// The initial contents of a node's output.
enum Output {
    Columns(Vec<Part>),
    Rows(Vec<AnnotatedTuple>),
}

impl Output {
    fn into_rows(self, width: u32) -> Vec<AnnotatedTuple> {
        match self {
            Output::Rows(r) => r,
            Output::Columns(parts) => exec::map_units(&parts, |p| p.rows(width)).concat(),
        }
    }
}

/// A stateless chain from a base scan, if the plan is one.
fn offload_chain(plan: &BoundPlan) -> Option<OffloadChain> {
    match &plan.node {
        BoundNode::Scan { relation } => Some(OffloadChain {
            relation: relation.clone(),
            base_schema: plan.schema.clone(),
            ops: Vec::new(),
        }),
        BoundNode::Select { predicate, input } => {
            let mut c = offload_chain(input)?;
            c.ops.push(ChainOp::Select(predicate.clone()));
            Some(c)
        }
        BoundNode::Project { exprs, input } => {
            let mut c = offload_chain(input)?;
            c.ops.push(ChainOp::Project(exprs.clone()));
            Some(c)
        }
        _ => None,
    }
}

impl Node {
    /// Builds empty operator state for a plan without its merge root.
    pub fn build(plan: &BoundPlan, config: &BufferConfig, width: u32) -> Result<Node> {
        let op = match &plan.node {
            BoundNode::Scan { relation } => Op::Scan {
                relation: relation.clone(),
            },
            BoundNode::Select { predicate, input } => Op::Select {
                predicate: predicate.clone(),
                input: Box::new(Node::build(input, config, width)?),
            },
            BoundNode::Project { exprs, input } => Op::Project {
                exprs: exprs.clone(),
                input: Box::new(Node::build(input, config, width)?),
            },
            BoundNode::Join { keys, left, right } => {
                let side = |p: &BoundPlan| match offload_chain(p) {
                    Some(c) => JoinSide::Offload(c),
                    None => JoinSide::Materialized(Materialized::default()),
                };
                Op::Join {
                    join: JoinNode::new(keys.clone(), side(left), side(right)),
                    left: Box::new(Node::build(left, config, width)?),
                    right: Box::new(Node::build(right, config, width)?),
                }
            }
            BoundNode::Aggregate {
                group_by,
                aggregates,
                input,
            } => Op::Aggregate {
                agg: AggNode::new(group_by.clone(), aggregates.clone(), config.minmax, width),
                input: Box::new(Node::build(input, config, width)?),
            },
            BoundNode::TopK { k, order_by, input } => Op::TopK {
                topk: TopKNode::new(*k, order_by.clone(), config.topk.capacity(*k)?),
                input: Box::new(Node::build(input, config, width)?),
            },
            BoundNode::Merge { .. } => {
                return Err(sketchd_core::Error::InvalidPlan("merge below the root".into()).into())
            }
        };
        Ok(Node {
            schema: plan.schema.clone(),
            op,
        })
    }

    /// Fills operator state from the source and seeds the merge counts.
    pub fn init(&mut self, ctx: &mut Ctx<'_>, merge: &mut MergeState) -> Result<()> {
        let width = ctx.catalog.width();
        match self.init_output(ctx)? {
            Output::Columns(parts) => {
                for p in &parts {
                    for &o in &p.chain.origin {
                        let o = o as usize;
                        merge.add(&Sketch::singleton(width, FragmentId(p.frags[o])), p.mults[o]);
                    }
                }
            }
            Output::Rows(rows) => {
                for r in &rows {
                    merge.add(&r.sketch, r.multiplicity);
                }
            }
        }
        Ok(())
    }

    fn init_output(&mut self, ctx: &mut Ctx<'_>) -> Result<Output> {
        let width = ctx.catalog.width();
        Ok(match &mut self.op {
            Op::Scan { relation } => {
                let batches = ctx.source.scan_batches(relation)?;
                let schema = ctx.source.schema_of(relation)?;
                let resolver = ctx.catalog.resolver(&schema)?;
                let catalog_column = resolver.column();
                let parts = exec::try_map_units(&batches, |b| {
                    let frags = match catalog_column {
                        Some(c) => {
                            let col = &b.columns[c];
                            (0..b.len())
                                .map(|i| Ok(resolver.fragment_of_value(&col.get(i))?.0))
                                .collect::<sketchd_core::Result<Vec<_>>>()?
                        }
                        None => vec![resolver.fragment_of_value(&Value::I64(0))?.0; b.len()],
                    };
                    Ok(Part {
                        chain: ChainOutput::scan(b),
                        frags: Arc::new(frags),
                        mults: b.multiplicities.clone(),
                    })
                })?;
                Output::Columns(parts)
            }
            Op::Select { predicate, input } => match input.init_output(ctx)? {
                Output::Columns(parts) => Output::Columns(exec::for_each_task(parts, |p| {
                    Ok(Part {
                        chain: p.chain.select(predicate)?,
                        ..p
                    })
                })
                .into_iter()
                .collect::<sketchd_core::Result<_>>()?),
                Output::Rows(rows) => {
                    let keep = exec::try_map(&rows, |r| predicate.eval(&r.tuple))?;
                    Output::Rows(rows.into_iter().zip(keep).filter_map(|(r, k)| k.then_some(r)).collect())
                }
            },
            Op::Project { exprs, input } => match input.init_output(ctx)? {
                Output::Columns(parts) => Output::Columns(exec::for_each_task(parts, |p| {
                    Ok(Part {
                        chain: p.chain.project(exprs)?,
                        ..p
                    })
                })
                .into_iter()
                .collect::<sketchd_core::Result<_>>()?),
                Output::Rows(rows) => Output::Rows(exec::try_map(&rows, |r| {
                    Ok(AnnotatedTuple {
                        tuple: Tuple::new(exprs.iter().map(|e| e.eval(&r.tuple)).collect::<sketchd_core::Result<_>>()?),
                        sketch: r.sketch.clone(),
                        multiplicity: r.multiplicity,
                    })
                })?),
            },
            Op::Join { join, left, right } => {
                let l = left.init_output(ctx)?.into_rows(width);
                let r = right.init_output(ctx)?.into_rows(width);
                join.load(&l, &r);
                Output::Rows(join.join_rows(&l, &r)?)
            }
            Op::Aggregate { agg, input } => {
                match input.init_output(ctx)? {
                    Output::Columns(parts) => absorb_columns(agg, &parts)?,
                    Output::Rows(rows) => agg.absorb(&rows)?,
                }
                Output::Rows(agg.output()?)
            }
            Op::TopK { topk, input } => {
                for r in input.init_output(ctx)?.into_rows(width) {
                    topk.insert(r.tuple, r.sketch, r.multiplicity);
                }
                Output::Rows(topk.output())
            }
        })
    }

    pub fn label(&self) -> String {
        match &self.op {
            Op::Scan { relation } => format!("scan {relation}"),
            Op::Select { .. } => "select".into(),
            Op::Project { .. } => "project".into(),
            Op::Join { .. } => "join".into(),
            Op::Aggregate { .. } => "aggregate".into(),
            Op::TopK { .. } => "top-k".into(),
        }
    }

    /// Propagates a delta bottom-up and returns this node's output delta.
    pub fn process(&mut self, delta: &AnnotatedDeltaDatabase, ctx: &mut Ctx<'_>) -> Result<Vec<AnnotatedDeltaTuple>> {
        let rows = self.process_op(delta, ctx)?;
        if let Some(t) = ctx.trace.as_mut() {
            t.push(NodeTrace {
                operator: self.label(),
                output: AnnotatedDelta::new(self.schema.clone(), rows.clone()),
            });
        }
        Ok(rows)
    }

    fn process_op(&mut self, delta: &AnnotatedDeltaDatabase, ctx: &mut Ctx<'_>) -> Result<Vec<AnnotatedDeltaTuple>> {
        Ok(match &mut self.op {
            Op::Scan { relation } => delta
                .get(relation)
                .map(|d| d.rows().to_vec())
                .unwrap_or_default(),
            Op::Select { predicate, input } => {
                let rows = input.process(delta, ctx)?;
                let keep = exec::try_map(&rows, |d| predicate.eval(&d.tuple))?;
                rows.into_iter().zip(keep).filter_map(|(d, k)| k.then_some(d)).collect()
            }
            Op::Project { exprs, input } => {
                let rows = input.process(delta, ctx)?;
                exec::try_map(&rows, |d| {
                    Ok(AnnotatedDeltaTuple {
                        tag: d.tag,
                        tuple: Tuple::new(exprs.iter().map(|e| e.eval(&d.tuple)).collect::<sketchd_core::Result<_>>()?),
                        sketch: d.sketch.clone(),
                        multiplicity: d.multiplicity,
                    })
                })?
            }
            Op::Join { join, left, right } => {
                let l = left.process(delta, ctx)?;
                let r = right.process(delta, ctx)?;
                join.process(&l, &r, ctx)?
            }
            Op::Aggregate { agg, input } => {
                let rows = input.process(delta, ctx)?;
                agg.process(&rows)?
            }
            Op::TopK { topk, input } => {
                let rows = input.process(delta, ctx)?;
                topk.process(&rows)?
            }
        })
    }

    pub fn children(&self) -> Vec<&Node> {
        match &self.op {
            Op::Scan { .. } => Vec::new(),
            Op::Select { input, .. } | Op::Project { input, .. } | Op::Aggregate { input, .. } | Op::TopK { input, .. } => {
                vec![input]
            }
            Op::Join { left, right, .. } => vec![left, right],
        }
    }

    pub fn children_mut(&mut self) -> Vec<&mut Node> {
        match &mut self.op {
            Op::Scan { .. } => Vec::new(),
            Op::Select { input, .. } | Op::Project { input, .. } | Op::Aggregate { input, .. } | Op::TopK { input, .. } => {
                vec![input]
            }
            Op::Join { left, right, .. } => vec![left, right],
        }
    }
}

/// Aggregates a run of parts into one partial group map.
fn absorb_parts<K, F>(agg: &AggNode, parts: &[Part], key: F) -> Result<HashMap<K, Group>>
where
    K: Hash + Eq,
    F: Fn(&Part, usize) -> K,
{
    let mut groups: HashMap<K, Group> = HashMap::new();
    for p in parts {
        for i in 0..p.chain.len() {
            let o = p.chain.origin[i] as usize;
            let g = groups.entry(key(p, i)).or_insert_with(|| agg.empty_group());
            g.add(
                agg.aggs.iter().map(|a| p.chain.value(a.arg, i)),
                iter::once(FragmentId(p.frags[o])),
                p.mults[o],
            )?;
        }
    }
    Ok(groups)
}

fn merge_partials<K>(agg: &mut AggNode, partials: Vec<HashMap<K, Group>>, to_tuple: impl Fn(K) -> Tuple) -> Result<()> {
    for m in partials {
        for (k, g) in m {
            match agg.groups.entry(to_tuple(k)) {
                std::collections::hash_map::Entry::Occupied(mut e) => e.get_mut().merge(g)?,
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(g);
                }
            }
        }
    }
    Ok(())
}

/// Builds aggregate state straight from column chunks. Each worker folds a
/// contiguous run of chunks into its own map.
fn absorb_columns(agg: &mut AggNode, parts: &[Part]) -> Result<()> {
    let units: Vec<&[Part]> = parts.chunks(parts.len().div_ceil(exec::workers()).max(1)).collect();
    let single_int = match agg.group_by.as_slice() {
        [g] => parts.iter().all(|p| p.chain.columns[*g].as_i64().is_some()),
        _ => false,
    };
    if single_int {
        let g = agg.group_by[0];
        let partials = exec::map_units(&units, |u| {
            absorb_parts(agg, u, |p, i| {
                p.chain.columns[g].as_i64().expect("checked above")[p.chain.positions[i] as usize]
            })
        });
        let partials = partials.into_iter().collect::<Result<Vec<_>>>()?;
        merge_partials(agg, partials, |k| Tuple::new(vec![Value::I64(k)]))
    } else {
        let cols = agg.group_by.clone();
        let partials = exec::map_units(&units, |u| {
            absorb_parts(agg, u, |p, i| Tuple::new(cols.iter().map(|&c| p.chain.value(c, i)).collect()))
        });
        let partials = partials.into_iter().collect::<Result<Vec<_>>>()?;
        merge_partials(agg, partials, |k| k)
    }
}
