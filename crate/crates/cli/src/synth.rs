//! Synthetic tables: a key, a uniform group attribute and attributes that are
//! linear in the group attribute plus Gaussian noise.

use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sketchd_core::csv_io::header_of;
use sketchd_core::{Attribute, BagRelation, Kind, Schema, Tuple, Value};

use crate::error::{CliError, Result};

/// Names of the attributes that follow `a`; attribute `i` has slope `i + 1`.
pub const CORRELATED: [&str; 9] = ["b", "c", "d", "e", "f", "g", "h", "i", "j"];

/// Ids of generated insert batches start here, spaced by [`ID_STRIDE`] per seed.
pub const UPDATE_ID_BASE: i64 = 1 << 40;
pub const ID_STRIDE: i64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub rows: u64,
    pub groups: u64,
    pub seed: u64,
    /// Standard deviation of the noise on correlated attributes.
    pub sigma: f64,
}

pub fn schema(name: &str) -> Schema {
    let mut attrs = vec![Attribute::new("id", Kind::I64), Attribute::new("a", Kind::I64)];
    attrs.extend(CORRELATED.iter().map(|n| Attribute::new(*n, Kind::I64)));
    Schema::new(name, attrs).expect("distinct names")
}

/// Produces rows in a seed-determined order. Group values are dealt in
/// shuffled rounds, so every round of `groups` rows covers each group once.
pub struct RowSource {
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    groups: u64,
    deck: Vec<i64>,
    next_id: i64,
}

impl RowSource {
    pub fn new(groups: u64, sigma: f64, seed: u64, first_id: i64) -> Result<Self> {
        if groups == 0 {
            return Err(CliError::InvalidArgument("groups must be at least 1".into()));
        }
        let noise = Normal::new(0.0, sigma)
            .map_err(|e| CliError::InvalidArgument(format!("noise sigma {sigma}: {e}")))?;
        Ok(RowSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            groups,
            deck: Vec::new(),
            next_id: first_id,
        })
    }

    pub fn next_row(&mut self) -> Tuple {
        if self.deck.is_empty() {
            self.deck = (0..self.groups as i64).collect();
            self.deck.shuffle(&mut self.rng);
        }
        let a = self.deck.pop().expect("refilled");
        let id = self.next_id;
        self.next_id += 1;
        let mut values = Vec::with_capacity(2 + CORRELATED.len());
        values.push(Value::I64(id));
        values.push(Value::I64(a));
        for slope in 1..=CORRELATED.len() as i64 {
            let noise = self.noise.sample(&mut self.rng).round() as i64;
            values.push(Value::I64(slope * a + noise));
        }
        Tuple::new(values)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn groups(&self) -> u64 {
        self.groups
    }

    /// A value drawn uniformly from `[0, n)`.
    pub fn pick(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

pub fn generate(name: &str, cfg: SynthConfig) -> Result<BagRelation> {
    if cfg.rows == 0 {
        return Err(CliError::InvalidArgument("rows must be at least 1".into()));
    }
    let mut src = RowSource::new(cfg.groups, cfg.sigma, cfg.seed, 0)?;
    let rows: Vec<(Tuple, u64)> = (0..cfg.rows).map(|_| (src.next_row(), 1)).collect();
    Ok(BagRelation::from_consolidated(Arc::new(schema(name)), rows))
}

/// Streams a generated table as CSV with a typed header.
pub fn write_csv(cfg: SynthConfig, out: impl Write) -> Result<()> {
    if cfg.rows == 0 {
        return Err(CliError::InvalidArgument("rows must be at least 1".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header_of(&schema("t")))?;
    let mut src = RowSource::new(cfg.groups, cfg.sigma, cfg.seed, 0)?;
    let mut fields: Vec<String> = Vec::new();
    for _ in 0..cfg.rows {
        let row = src.next_row();
        fields.clear();
        fields.extend(row.values().iter().map(|v| v.to_string()));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}
