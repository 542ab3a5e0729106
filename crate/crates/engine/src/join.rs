//! Join maintenance: delta against current contents, plus delta against delta.

use std::collections::{HashMap, HashSet};

use sketchd_core::bind::JoinKeys;
use sketchd_core::source::{JoinRequest, OffloadChain, Side};
use sketchd_core::{AnnotatedDeltaTuple, AnnotatedTuple, ChainOutput, Sketch, Tag, Tuple};

use crate::bloom::BloomFilter;
use crate::error::{EngineError, Result};
use crate::node::Ctx;

/// Current contents of one join input held in memory, indexed by join key.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Materialized {
    pub rows: HashMap<Tuple, HashMap<(Tuple, Sketch), u64>>,
}

impl Materialized {
    pub fn insert(&mut self, key: Tuple, tuple: Tuple, sketch: Sketch, n: u64) {
        *self.rows.entry(key).or_default().entry((tuple, sketch)).or_default() += n;
    }

    pub fn apply(&mut self, key: Tuple, d: &AnnotatedDeltaTuple) -> Result<()> {
        if d.tag == Tag::Insert {
            self.insert(key, d.tuple.clone(), d.sketch.clone(), d.multiplicity);
            return Ok(());
        }
        let bucket = self.rows.get_mut(&key);
        let entry = (d.tuple.clone(), d.sketch.clone());
        match bucket.as_ref().and_then(|b| b.get(&entry)).copied() {
            Some(c) if c >= d.multiplicity => {
                let bucket = bucket.expect("present");
                if c == d.multiplicity {
                    bucket.remove(&entry);
                    if bucket.is_empty() {
                        self.rows.remove(&key);
                    }
                } else {
                    bucket.insert(entry, c - d.multiplicity);
                }
                Ok(())
            }
            _ => Err(EngineError::InconsistentDelta(format!(
                "deleting {} more often than it occurs in a join input",
                d.tuple
            ))),
        }
    }
}

/// Where the current contents of a join input come from.
#[derive(Debug, Clone)]
pub(crate) enum JoinSide {
    /// A stateless chain over a base table, evaluated by the store.
    Offload(OffloadChain),
    Materialized(Materialized),
}

#[derive(Debug, Clone)]
pub(crate) struct JoinNode {
    pub keys: JoinKeys,
    pub left: JoinSide,
    pub right: JoinSide,
    /// Keys present on the left (right) input, used to filter right (left) deltas.
    pub left_bloom: Option<BloomFilter>,
    pub right_bloom: Option<BloomFilter>,
}

fn emit(
    keys: &JoinKeys,
    l: &Tuple,
    r: &Tuple,
    tag: Tag,
    sketches: (&Sketch, &Sketch),
    n: u64,
    out: &mut Vec<AnnotatedDeltaTuple>,
) -> Result<()> {
    if let Some(joined) = keys.matches(l, r)? {
        out.push(AnnotatedDeltaTuple::new(tag, joined, sketches.0.union(sketches.1), n));
    }
    Ok(())
}

impl JoinNode {
    pub fn new(keys: JoinKeys, left: JoinSide, right: JoinSide) -> Self {
        JoinNode {
            keys,
            left,
            right,
            left_bloom: None,
            right_bloom: None,
        }
    }

    fn key_of(&self, side: Side, t: &Tuple) -> Tuple {
        match side {
            Side::Left => self.keys.left_key(t),
            Side::Right => self.keys.right_key(t),
        }
    }

    /// Fills materialized sides from the inputs' initial contents.
    pub fn load(&mut self, left: &[AnnotatedTuple], right: &[AnnotatedTuple]) {
        let keys = self.keys.clone();
        for (store, rows, side) in [(&mut self.left, left, Side::Left), (&mut self.right, right, Side::Right)] {
            if let JoinSide::Materialized(m) = store {
                for r in rows {
                    let key = match side {
                        Side::Left => keys.left_key(&r.tuple),
                        Side::Right => keys.right_key(&r.tuple),
                    };
                    m.insert(key, r.tuple.clone(), r.sketch.clone(), r.multiplicity);
                }
            }
        }
    }

    /// Hash join of the initial inputs.
    pub fn join_rows(&self, left: &[AnnotatedTuple], right: &[AnnotatedTuple]) -> Result<Vec<AnnotatedTuple>> {
        let mut index: HashMap<Tuple, Vec<&AnnotatedTuple>> = HashMap::new();
        for r in right {
            index.entry(self.keys.right_key(&r.tuple)).or_default().push(r);
        }
        let mut out = Vec::new();
        for l in left {
            let Some(ms) = index.get(&self.keys.left_key(&l.tuple)) else { continue };
            for r in ms {
                if let Some(joined) = self.keys.matches(&l.tuple, &r.tuple)? {
                    out.push(AnnotatedTuple {
                        tuple: joined,
                        sketch: l.sketch.union(&r.sketch),
                        multiplicity: l.multiplicity * r.multiplicity,
                    });
                }
            }
        }
        Ok(out)
    }

    fn build_bloom(&self, chain: &OffloadChain, side: Side, ctx: &Ctx<'_>) -> Result<BloomFilter> {
        let cols = match side {
            Side::Left => &self.keys.left,
            Side::Right => &self.keys.right,
        };
        let batches = ctx.source.scan_batches(&chain.relation)?;
        let mut seen = HashSet::new();
        for b in &batches {
            let out = ChainOutput::scan(b).apply(&chain.ops)?;
            for i in 0..out.len() {
                seen.insert(Tuple::new(cols.iter().map(|&c| out.value(c, i)).collect()));
            }
        }
        let mut f = BloomFilter::with_capacity(seen.len(), ctx.config.bloom_fpr);
        for k in &seen {
            f.insert(k);
        }
        Ok(f)
    }

    /// The delta of one input joined with the pre-delta contents of the other.
    fn against_current(&mut self, delta: &[AnnotatedDeltaTuple], delta_side: Side, ctx: &mut Ctx<'_>) -> Result<Vec<AnnotatedDeltaTuple>> {
        let other_side = match delta_side {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        };
        let other = match other_side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        };
        let mut out = Vec::new();
        match other {
            JoinSide::Materialized(m) => {
                for d in delta {
                    let key = if self.keys.is_equi() {
                        self.key_of(delta_side, &d.tuple)
                    } else {
                        Tuple::new(Vec::new())
                    };
                    let Some(bucket) = m.rows.get(&key) else { continue };
                    for ((t, s), &n) in bucket {
                        let (l, r, sk) = match delta_side {
                            Side::Left => (&d.tuple, t, (&d.sketch, s)),
                            Side::Right => (t, &d.tuple, (s, &d.sketch)),
                        };
                        emit(&self.keys, l, r, d.tag, sk, d.multiplicity * n, &mut out)?;
                    }
                }
            }
            JoinSide::Offload(chain) => {
                let chain = chain.clone();
                let filtered;
                let mut rows = delta;
                if ctx.config.bloom && self.keys.is_equi() {
                    let slot_empty = match other_side {
                        Side::Left => self.left_bloom.is_none(),
                        Side::Right => self.right_bloom.is_none(),
                    };
                    if slot_empty {
                        let f = self.build_bloom(&chain, other_side, ctx)?;
                        match other_side {
                            Side::Left => self.left_bloom = Some(f),
                            Side::Right => self.right_bloom = Some(f),
                        }
                    }
                    let bloom = match other_side {
                        Side::Left => self.left_bloom.as_ref(),
                        Side::Right => self.right_bloom.as_ref(),
                    }
                    .expect("built above");
                    filtered = crate::bloom::prefilter(delta, bloom, |t| self.key_of(delta_side, t));
                    ctx.stats.bloom_probes += delta.len() as u64;
                    ctx.stats.bloom_forwarded += filtered.len() as u64;
                    rows = &filtered;
                }
                if rows.is_empty() {
                    ctx.stats.store_calls_skipped += 1;
                    return Ok(out);
                }
                ctx.stats.store_calls += 1;
                out = ctx.source.join_delta(&JoinRequest {
                    chain: &chain,
                    delta: rows,
                    delta_side,
                    keys: &self.keys,
                    catalog: ctx.catalog,
                })?;
            }
        }
        Ok(out)
    }

    fn delta_delta(&self, dl: &[AnnotatedDeltaTuple], dr: &[AnnotatedDeltaTuple]) -> Result<Vec<AnnotatedDeltaTuple>> {
        let mut index: HashMap<Tuple, Vec<&AnnotatedDeltaTuple>> = HashMap::new();
        for r in dr {
            index.entry(self.keys.right_key(&r.tuple)).or_default().push(r);
        }
        let mut out = Vec::new();
        for l in dl {
            let Some(ms) = index.get(&self.keys.left_key(&l.tuple)) else { continue };
            for r in ms {
                emit(
                    &self.keys,
                    &l.tuple,
                    &r.tuple,
                    l.tag.product(r.tag),
                    (&l.sketch, &r.sketch),
                    l.multiplicity * r.multiplicity,
                    &mut out,
                )?;
            }
        }
        Ok(out)
    }

    pub fn process(&mut self, dl: &[AnnotatedDeltaTuple], dr: &[AnnotatedDeltaTuple], ctx: &mut Ctx<'_>) -> Result<Vec<AnnotatedDeltaTuple>> {
        let mut out = Vec::new();
        if !dl.is_empty() {
            out.extend(self.against_current(dl, Side::Left, ctx)?);
        }
        if !dr.is_empty() {
            out.extend(self.against_current(dr, Side::Right, ctx)?);
        }
        if !dl.is_empty() && !dr.is_empty() {
            out.extend(self.delta_delta(dl, dr)?);
        }
        let equi = self.keys.is_equi();
        for (delta, side) in [(dl, Side::Left), (dr, Side::Right)] {
            let keys: Vec<Tuple> = delta
                .iter()
                .map(|d| if equi { self.key_of(side, &d.tuple) } else { Tuple::new(Vec::new()) })
                .collect();
            let (store, bloom) = match side {
                Side::Left => (&mut self.left, &mut self.left_bloom),
                Side::Right => (&mut self.right, &mut self.right_bloom),
            };
            if let JoinSide::Materialized(m) = store {
                let rows = delta.iter().zip(&keys);
                for (d, k) in rows.clone().filter(|(d, _)| d.tag == Tag::Insert) {
                    m.apply(k.clone(), d)?;
                }
                for (d, k) in rows.filter(|(d, _)| d.tag == Tag::Delete) {
                    m.apply(k.clone(), d)?;
                }
            }
            if let Some(f) = bloom {
                for (d, k) in delta.iter().zip(&keys) {
                    if d.tag == Tag::Insert {
                        f.insert(k);
                    }
                }
            }
        }
        Ok(out)
    }
}
