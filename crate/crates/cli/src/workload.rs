//! Workload files: one JSON record per line.
//!
//! ```text
//! {"op":"load","table":"t","path":"t.csv"}
//! {"op":"declare_partition","relation":"t","attribute":"a","boundaries":[0,10,20]}
//! {"op":"register_query","name":"q","plan":{"table_access":{"relation":"t"}}}
//! {"op":"update","table":"t","insert":[[1,2]],"delete":[]}
//! {"op":"query","name":"q"}
//! ```
//!
//! Blank lines and lines starting with `#` are skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sketchd_core::{
    AggCall, AggFn, Attribute, CmpOp, PartitionSpec, Predicate, QueryPlan, Value,
};

use crate::error::{CliError, Result};

fn default_groups() -> u64 {
    1000
}

fn default_sigma() -> f64 {
    1.0
}

/// Rows drawn by the synthetic generator instead of listed inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generate {
    #[serde(default)]
    pub inserts: u64,
    #[serde(default)]
    pub deletes: u64,
    pub seed: u64,
    #[serde(default = "default_groups")]
    pub groups: u64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateSpec {
    pub table: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub insert: Vec<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delete: Vec<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<Generate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Record {
    CreateTable { name: String, attributes: Vec<Attribute> },
    /// Loads a CSV file; the table is created from the header if missing.
    Load { table: String, path: PathBuf },
    DeclarePartition(PartitionSpec),
    RegisterQuery { name: String, plan: QueryPlan },
    Update(UpdateSpec),
    Query { name: String },
    Checkpoint { label: String },
}

impl Record {
    pub fn kind(&self) -> &'static str {
        match self {
            Record::CreateTable { .. } => "create_table",
            Record::Load { .. } => "load",
            Record::DeclarePartition(_) => "declare_partition",
            Record::RegisterQuery { .. } => "register_query",
            Record::Update(_) => "update",
            Record::Query { .. } => "query",
            Record::Checkpoint { .. } => "checkpoint",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    /// Records with their 1-based line numbers.
    pub records: Vec<(usize, Record)>,
    /// Relative load paths resolve against this directory.
    pub base_dir: PathBuf,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Workload {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let record: Record = serde_json::from_str(line).map_err(|e| CliError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push((i + 1, record));
        }
        let w = Workload {
            records,
            base_dir: base_dir.into(),
        };
        w.validate()?;
        Ok(w)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, dir)
    }

    /// Checks names and that every reference points at something declared
    /// on an earlier line.
    pub fn validate(&self) -> Result<()> {
        let mut tables = BTreeSet::new();
        let mut queries = BTreeSet::new();
        for (line, r) in &self.records {
            let bad = |message: String| CliError::Parse { line: *line, message };
            let known = |t: &str, tables: &BTreeSet<String>| {
                if tables.contains(t) {
                    Ok(())
                } else {
                    Err(bad(format!("unknown table {t:?}")))
                }
            };
            match r {
                Record::CreateTable { name, attributes } => {
                    if !valid_name(name) {
                        return Err(bad(format!("invalid table name {name:?}")));
                    }
                    if attributes.is_empty() {
                        return Err(bad(format!("table {name:?} has no attributes")));
                    }
                    if !tables.insert(name.clone()) {
                        return Err(bad(format!("table {name:?} created twice")));
                    }
                }
                Record::Load { table, .. } => {
                    if !valid_name(table) {
                        return Err(bad(format!("invalid table name {table:?}")));
                    }
                    tables.insert(table.clone());
                }
                Record::DeclarePartition(spec) => known(&spec.relation, &tables)?,
                Record::RegisterQuery { name, plan } => {
                    if !valid_name(name) {
                        return Err(bad(format!("invalid query name {name:?}")));
                    }
                    for t in plan.relations() {
                        known(&t, &tables)?;
                    }
                    if !queries.insert(name.clone()) {
                        return Err(bad(format!("query {name:?} registered twice")));
                    }
                }
                Record::Update(u) => {
                    known(&u.table, &tables)?;
                    if u.generate.is_none() && u.insert.is_empty() && u.delete.is_empty() {
                        return Err(bad("update changes nothing".into()));
                    }
                }
                Record::Query { name } => {
                    if !queries.contains(name) {
                        return Err(bad(format!("unknown query {name:?}")));
                    }
                }
                Record::Checkpoint { .. } => {}
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (_, r) in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Names of registered queries with their plans.
    pub fn queries(&self) -> BTreeMap<String, QueryPlan> {
        self.records
            .iter()
            .filter_map(|(_, r)| match r {
                Record::RegisterQuery { name, plan } => Some((name.clone(), plan.clone())),
                _ => None,
            })
            .collect()
    }
}

/// Updates and queries per block, written like `1U1Q` or `10U1Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub updates: u32,
    pub queries: u32,
}

impl FromStr for Ratio {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CliError::InvalidArgument(format!("bad ratio {s:?}, expected e.g. 1U1Q"));
        let upper = s.trim().to_ascii_uppercase();
        let (u, q) = upper.split_once('U').ok_or_else(bad)?;
        let q = q.strip_suffix('Q').ok_or_else(bad)?;
        let ratio = Ratio {
            updates: u.parse().map_err(|_| bad())?,
            queries: q.parse().map_err(|_| bad())?,
        };
        if ratio.updates + ratio.queries == 0 {
            return Err(bad());
        }
        Ok(ratio)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}U{}Q", self.updates, self.queries)
    }
}

/// Parameters of a generated mixed workload over one synthetic table.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedWorkload {
    pub table: String,
    pub csv_path: PathBuf,
    pub rows: u64,
    pub groups: u64,
    pub sigma: f64,
    pub fragments: u64,
    pub ops: u64,
    pub ratio: Ratio,
    pub delta_rows: u64,
    pub delete_rows: u64,
    pub seed: u64,
}

/// Having threshold on `sum(c)`. With `c` close to `2a`, a group's sum is
/// about `2 * a * rows / groups`, so groups above `0.9 * groups` pass.
pub fn having_threshold(rows: u64) -> i64 {
    (rows as i64).saturating_mul(9) / 5
}

/// `select sc > T from (select a, sum(c) as sc from t group by a)`.
pub fn group_having_query(table: &str, threshold: i64) -> QueryPlan {
    QueryPlan::scan(table)
        .aggregate(&["a"], vec![AggCall::new(AggFn::Sum, "c", "sc")])
        .select(Predicate::attr_cmp("sc", CmpOp::Gt, threshold))
}

/// Equal-width boundaries over `[0, groups)`.
pub fn group_boundaries(groups: u64, fragments: u64) -> Vec<Value> {
    let n = fragments.clamp(1, groups.max(1));
    let mut out: Vec<Value> = (0..n).map(|i| Value::I64((i * groups / n) as i64)).collect();
    out.dedup();
    let last = groups.saturating_sub(1).max(1) as i64;
    if out.last() != Some(&Value::I64(last)) {
        out.push(Value::I64(last));
    }
    out
}

impl MixedWorkload {
    pub fn build(&self) -> Workload {
        let mut records = vec![
            Record::Load {
                table: self.table.clone(),
                path: self.csv_path.clone(),
            },
            Record::DeclarePartition(PartitionSpec {
                relation: self.table.clone(),
                attribute: Some("a".into()),
                boundaries: group_boundaries(self.groups, self.fragments),
            }),
            Record::RegisterQuery {
                name: "q".into(),
                plan: group_having_query(&self.table, having_threshold(self.rows)),
            },
        ];
        let block = (self.ratio.updates + self.ratio.queries) as u64;
        let mut update = 0u64;
        for i in 0..self.ops {
            if i % block < self.ratio.updates as u64 {
                update += 1;
                records.push(Record::Update(UpdateSpec {
                    table: self.table.clone(),
                    insert: Vec::new(),
                    delete: Vec::new(),
                    generate: Some(Generate {
                        inserts: self.delta_rows,
                        deletes: self.delete_rows,
                        seed: self.seed.wrapping_add(update),
                        groups: self.groups,
                        sigma: self.sigma,
                    }),
                }));
            } else {
                records.push(Record::Query { name: "q".into() });
            }
        }
        Workload {
            records: records.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect(),
            base_dir: PathBuf::new(),
        }
    }
}
