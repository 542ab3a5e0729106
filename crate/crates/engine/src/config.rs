//! Buffer bounds and optimization switches.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::EngineError;

/// How many annotated tuples a top-k node keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopKBuffer {
    Unbounded,
    /// A multiple of `k`.
    TimesK(u64),
    Fixed(u64),
}

impl TopKBuffer {
    /// Capacity in positions for a given `k`, or `None` when unbounded.
    pub fn capacity(self, k: u64) -> Result<Option<u64>, EngineError> {
        match self {
            TopKBuffer::Unbounded => Ok(None),
            TopKBuffer::TimesK(f) => Ok(Some(k.saturating_mul(f.max(1)))),
            TopKBuffer::Fixed(l) if l < k => Err(EngineError::InvalidConfig(format!(
                "top-k buffer {l} is smaller than k = {k}"
            ))),
            TopKBuffer::Fixed(l) => Ok(Some(l)),
        }
    }
}

impl fmt::Display for TopKBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopKBuffer::Unbounded => f.write_str("unbounded"),
            TopKBuffer::TimesK(n) => write!(f, "{n}k"),
            TopKBuffer::Fixed(l) => write!(f, "{l}"),
        }
    }
}

impl FromStr for TopKBuffer {
    type Err = EngineError;

    /// `unbounded`, `<n>k` or a plain number of positions.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EngineError::InvalidConfig(format!("bad top-k buffer {s:?}"));
        let s = s.trim();
        if s.eq_ignore_ascii_case("unbounded") || s.eq_ignore_ascii_case("off") {
            return Ok(TopKBuffer::Unbounded);
        }
        if let Some(n) = s.strip_suffix('k') {
            let n: u64 = n.parse().map_err(|_| bad())?;
            return if n == 0 { Err(bad()) } else { Ok(TopKBuffer::TimesK(n)) };
        }
        let l: u64 = s.parse().map_err(|_| bad())?;
        if l == 0 {
            return Err(bad());
        }
        Ok(TopKBuffer::Fixed(l))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferConfig {
    pub topk: TopKBuffer,
    /// Values kept per min/max group; `None` keeps all.
    pub minmax: Option<usize>,
    pub bloom: bool,
    pub bloom_fpr: f64,
    pub pushdown: bool,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig {
            topk: TopKBuffer::TimesK(5),
            minmax: Some(16),
            bloom: true,
            bloom_fpr: 0.01,
            pushdown: true,
        }
    }
}

impl BufferConfig {
    /// Unbounded state and no optimizations.
    pub fn exact() -> Self {
        BufferConfig {
            topk: TopKBuffer::Unbounded,
            minmax: None,
            bloom: false,
            bloom_fpr: 0.01,
            pushdown: false,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.bloom_fpr > 0.0 && self.bloom_fpr < 1.0) {
            return Err(EngineError::InvalidConfig(format!(
                "bloom false-positive rate {} is not in (0, 1)",
                self.bloom_fpr
            )));
        }
        if self.minmax == Some(0) {
            return Err(EngineError::InvalidConfig("min/max buffer must hold at least one value".into()));
        }
        Ok(())
    }
}
