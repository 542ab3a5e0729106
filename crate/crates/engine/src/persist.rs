//! Text snapshots of engine state.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sketchd_core::{PartitionCatalog, PartitionSpec, QueryPlan, Schema, Sketch, Tuple, Value};

use crate::aggregate::{Acc, Extremes, Group};
use crate::config::BufferConfig;
use crate::error::{EngineError, Result};
use crate::join::{JoinSide, Materialized};
use crate::merge::MergeState;
use crate::node::{Node, Op};
use crate::state::{bind, EngineState, EngineStats};

pub const FORMAT: &str = "sketchd-engine-state";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    format: String,
    version: u32,
    last_version: u64,
    plan: QueryPlan,
    partitions: Vec<PartitionSpec>,
    schemas: Vec<Schema>,
    config: BufferConfig,
    /// Non-zero merge counts as fragment id and count.
    merge: Vec<(u32, u64)>,
    nodes: Vec<Section>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row(Tuple, Sketch, u64);

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "node")]
enum Section {
    Join {
        left: Option<Vec<Row>>,
        right: Option<Vec<Row>>,
    },
    Aggregate {
        groups: Vec<GroupSection>,
    },
    TopK {
        entries: Vec<Row>,
        boundary: Option<(Tuple, Sketch)>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupSection {
    key: Tuple,
    cnt: u64,
    frags: Vec<(u32, u64)>,
    accs: Vec<AccSection>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "fn")]
enum AccSection {
    Sum { sum: Option<Value> },
    Count,
    Avg { sum: Option<Value> },
    Min { values: Vec<(Value, u64)>, boundary: Option<Value> },
    Max { values: Vec<(Value, u64)>, boundary: Option<Value> },
}

fn corrupt(msg: impl Into<String>) -> EngineError {
    EngineError::CorruptState(msg.into())
}

fn materialized_rows(m: &Materialized) -> Vec<Row> {
    let mut rows: Vec<Row> = m
        .rows
        .values()
        .flat_map(|b| b.iter().map(|((t, s), n)| Row(t.clone(), s.clone(), *n)))
        .collect();
    rows.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    rows
}

fn sections(node: &Node, out: &mut Vec<Section>) {
    match &node.op {
        Op::Join { join, .. } => {
            let side = |s: &JoinSide| match s {
                JoinSide::Materialized(m) => Some(materialized_rows(m)),
                JoinSide::Offload(_) => None,
            };
            out.push(Section::Join {
                left: side(&join.left),
                right: side(&join.right),
            });
        }
        Op::Aggregate { agg, .. } => {
            let mut groups: Vec<GroupSection> = agg
                .groups
                .iter()
                .map(|(k, g)| GroupSection {
                    key: k.clone(),
                    cnt: g.cnt,
                    frags: g.frags.iter().map(|(f, c)| (*f, *c)).collect(),
                    accs: g
                        .accs
                        .iter()
                        .map(|a| match a {
                            Acc::Sum(s) => AccSection::Sum { sum: s.clone() },
                            Acc::Count => AccSection::Count,
                            Acc::Avg(s) => AccSection::Avg { sum: s.clone() },
                            Acc::Extreme(e) => {
                                let values = e.values.iter().map(|(v, n)| (v.clone(), *n)).collect();
                                let boundary = e.boundary.clone();
                                if e.max {
                                    AccSection::Max { values, boundary }
                                } else {
                                    AccSection::Min { values, boundary }
                                }
                            }
                        })
                        .collect(),
                })
                .collect();
            groups.sort_by(|a, b| a.key.cmp(&b.key));
            out.push(Section::Aggregate { groups });
        }
        Op::TopK { topk, .. } => out.push(Section::TopK {
            entries: topk
                .entries
                .values()
                .flat_map(|inner| inner.iter().map(|((t, s), n)| Row(t.clone(), s.clone(), *n)))
                .collect(),
            boundary: topk.boundary.as_ref().map(|(_, e)| e.clone()),
        }),
        _ => {}
    }
    for c in node.children() {
        sections(c, out);
    }
}

fn check_sketch(s: &Sketch, width: u32) -> Result<()> {
    if s.width() != width {
        return Err(corrupt(format!("sketch over {} fragments, expected {width}", s.width())));
    }
    Ok(())
}

fn restore_node(node: &mut Node, sections: &mut std::vec::IntoIter<Section>, width: u32) -> Result<()> {
    match &mut node.op {
        Op::Join { join, .. } => {
            let Some(Section::Join { left, right }) = sections.next() else {
                return Err(corrupt("expected a join section"));
            };
            let keys = join.keys.clone();
            for (side, rows, is_left) in [(&mut join.left, left, true), (&mut join.right, right, false)] {
                match (side, rows) {
                    (JoinSide::Materialized(m), Some(rows)) => {
                        for Row(t, s, n) in rows {
                            check_sketch(&s, width)?;
                            if n == 0 {
                                return Err(corrupt("zero multiplicity in a join input"));
                            }
                            let key = if is_left { keys.left_key(&t) } else { keys.right_key(&t) };
                            m.insert(key, t, s, n);
                        }
                    }
                    (JoinSide::Offload(_), None) => {}
                    _ => return Err(corrupt("join input kind does not match the plan")),
                }
            }
        }
        Op::Aggregate { agg, .. } => {
            let Some(Section::Aggregate { groups }) = sections.next() else {
                return Err(corrupt("expected an aggregate section"));
            };
            let mut map = HashMap::with_capacity(groups.len());
            for g in groups {
                if g.cnt == 0 || g.accs.len() != agg.aggs.len() || g.key.arity() != agg.group_by.len() {
                    return Err(corrupt(format!("malformed group {}", g.key)));
                }
                let mut frags = BTreeMap::new();
                for (f, c) in g.frags {
                    if f >= width || c == 0 {
                        return Err(corrupt(format!("bad fragment count in group {}", g.key)));
                    }
                    frags.insert(f, c);
                }
                let mut accs = Vec::new();
                for (a, spec) in g.accs.into_iter().zip(&agg.aggs) {
                    use sketchd_core::AggFn;
                    let extreme = |max: bool, values: Vec<(Value, u64)>, boundary| Extremes {
                        max,
                        cap: agg.minmax,
                        values: values.into_iter().collect(),
                        boundary,
                    };
                    accs.push(match (a, spec.func) {
                        (AccSection::Sum { sum }, AggFn::Sum) => Acc::Sum(sum),
                        (AccSection::Count, AggFn::Count) => Acc::Count,
                        (AccSection::Avg { sum }, AggFn::Avg) => Acc::Avg(sum),
                        (AccSection::Min { values, boundary }, AggFn::Min) => Acc::Extreme(extreme(false, values, boundary)),
                        (AccSection::Max { values, boundary }, AggFn::Max) => Acc::Extreme(extreme(true, values, boundary)),
                        _ => return Err(corrupt("aggregate function does not match the plan")),
                    });
                }
                let group = Group {
                    cnt: g.cnt,
                    accs,
                    frags,
                };
                if map.insert(g.key.clone(), group).is_some() {
                    return Err(corrupt(format!("duplicate group {}", g.key)));
                }
            }
            agg.groups = map;
        }
        Op::TopK { topk, .. } => {
            let Some(Section::TopK { entries, boundary }) = sections.next() else {
                return Err(corrupt("expected a top-k section"));
            };
            topk.boundary = boundary.map(|(t, s)| (topk.order_key(&t), (t, s)));
            for Row(t, s, n) in entries {
                check_sketch(&s, width)?;
                if n == 0 {
                    return Err(corrupt("zero multiplicity in a top-k entry"));
                }
                let key = topk.order_key(&t);
                *topk.entries.entry(key).or_default().entry((t, s)).or_default() += n;
                topk.total += n;
            }
        }
        _ => {}
    }
    for c in node.children_mut() {
        restore_node(c, sections, width)?;
    }
    Ok(())
}

impl EngineState {
    /// Serializes the state as versioned JSON. Bloom filters are rebuilt on demand.
    pub fn persist(&self) -> Result<String> {
        let mut nodes = Vec::new();
        sections(&self.root, &mut nodes);
        let snapshot = Snapshot {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            last_version: self.last_version,
            plan: self.plan.clone(),
            partitions: self.catalog.specs(),
            schemas: self.schemas.values().map(|s| s.as_ref().clone()).collect(),
            config: self.config,
            merge: self
                .merge
                .counts()
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0)
                .map(|(i, c)| (i as u32, *c))
                .collect(),
            nodes,
        };
        serde_json::to_string_pretty(&snapshot).map_err(|e| corrupt(e.to_string()))
    }

    pub fn restore(text: &str) -> Result<EngineState> {
        let snap: Snapshot = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        if snap.format != FORMAT {
            return Err(corrupt(format!("unknown format {:?}", snap.format)));
        }
        if snap.version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {}", snap.version)));
        }
        let catalog = Arc::new(PartitionCatalog::from_specs(&snap.partitions).map_err(|e| corrupt(e.to_string()))?);
        let schemas: BTreeMap<String, Arc<Schema>> = snap
            .schemas
            .into_iter()
            .map(|s| (s.name.clone(), Arc::new(s)))
            .collect();
        let mut root = bind(&snap.plan, &schemas, &catalog, &snap.config).map_err(|e| corrupt(e.to_string()))?;
        let width = catalog.width();
        let mut sections = snap.nodes.into_iter();
        restore_node(&mut root, &mut sections, width)?;
        if sections.next().is_some() {
            return Err(corrupt("more node sections than stateful operators"));
        }
        let mut counts = vec![0; width as usize];
        for (f, c) in snap.merge {
            let slot = counts
                .get_mut(f as usize)
                .ok_or_else(|| corrupt(format!("merge count for unknown fragment {f}")))?;
            *slot = c;
        }
        Ok(EngineState {
            plan: snap.plan,
            catalog,
            config: snap.config,
            schemas,
            root,
            merge: MergeState::from_counts(counts),
            last_version: snap.last_version,
            stats: EngineStats::default(),
        })
    }
}
