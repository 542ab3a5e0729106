//! Columnar row chunks with per-column zone maps.

use std::sync::Arc;

use sketchd_core::{ColumnBatch, ColumnData, Range, Result, Schema, Tuple, Value};

pub const DEFAULT_CHUNK_CAPACITY: usize = 4096;

/// Inclusive min/max of a column within a chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneMap {
    pub min: Value,
    pub max: Value,
}

impl ZoneMap {
    pub fn overlaps(&self, r: &Range) -> bool {
        if self.max < r.low {
            return false;
        }
        if r.high_open {
            self.min < r.high
        } else {
            self.min <= r.high
        }
    }

    fn of(column: &ColumnData) -> Option<ZoneMap> {
        let (min, max) = match column {
            ColumnData::I64(c) => {
                let min = *c.iter().min()?;
                let max = *c.iter().max()?;
                (Value::I64(min), Value::I64(max))
            }
            ColumnData::F64(c) => {
                let min = c.iter().copied().map(Value::F64).min()?;
                let max = c.iter().copied().map(Value::F64).max()?;
                (min, max)
            }
            ColumnData::Str(c) => {
                let min = c.iter().min()?;
                let max = c.iter().max()?;
                (Value::Str(min.clone()), Value::Str(max.clone()))
            }
        };
        Some(ZoneMap { min, max })
    }
}

/// A batch of base rows plus zone maps for data skipping.
#[derive(Debug, Clone)]
pub struct Chunk {
    pub batch: ColumnBatch,
    pub zones: Vec<Option<ZoneMap>>,
}

impl Chunk {
    pub fn build(schema: &Schema, rows: &[(Tuple, u64)]) -> Result<Chunk> {
        Ok(Chunk::from_batch(ColumnBatch::from_rows(
            schema,
            rows.iter().map(|(t, n)| (t, *n)),
        )?))
    }

    pub fn from_batch(batch: ColumnBatch) -> Chunk {
        let zones = batch.columns.iter().map(|c| ZoneMap::of(c)).collect();
        Chunk { batch, zones }
    }

    /// Splits a large batch into chunks of at most `capacity` rows.
    pub fn split(batch: &ColumnBatch, capacity: usize) -> Vec<Chunk> {
        let n = batch.len();
        let bounds: Vec<(usize, usize)> = (0..n)
            .step_by(capacity.max(1))
            .map(|lo| (lo, (lo + capacity).min(n)))
            .collect();
        sketchd_core::exec::map_units(&bounds, |&(lo, hi)| {
            let columns = batch
                .columns
                .iter()
                .map(|c| {
                    Arc::new(match c.as_ref() {
                        ColumnData::I64(v) => ColumnData::I64(v[lo..hi].to_vec()),
                        ColumnData::F64(v) => ColumnData::F64(v[lo..hi].to_vec()),
                        ColumnData::Str(v) => ColumnData::Str(v[lo..hi].to_vec()),
                    })
                })
                .collect();
            Chunk::from_batch(ColumnBatch {
                columns,
                multiplicities: Arc::new(batch.multiplicities[lo..hi].to_vec()),
            })
        })
    }

    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }

    pub fn row(&self, i: usize) -> Tuple {
        self.batch.row(i)
    }

    /// Whether any row may fall in one of the ranges on `column`.
    pub fn may_match(&self, column: usize, ranges: &[Range]) -> bool {
        match &self.zones[column] {
            None => false,
            Some(z) => ranges.iter().any(|r| z.overlaps(r)),
        }
    }
}
