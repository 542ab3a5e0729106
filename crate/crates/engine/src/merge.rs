//! The root operator: per-fragment result counts.

use std::collections::BTreeMap;

use sketchd_core::{AnnotatedDeltaTuple, FragmentId, Sketch, SketchDelta};

use crate::error::{EngineError, Result};

/// Number of result tuples referencing each fragment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeState {
    counts: Vec<u64>,
    current: Sketch,
}

impl MergeState {
    pub fn new(width: u32) -> Self {
        MergeState {
            counts: vec![0; width as usize],
            current: Sketch::empty(width),
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        let width = counts.len() as u32;
        let current = Sketch::from_ids(
            width,
            counts
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0)
                .map(|(i, _)| FragmentId(i as u32)),
        );
        MergeState { counts, current }
    }

    pub fn width(&self) -> u32 {
        self.counts.len() as u32
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, id: FragmentId) -> u64 {
        self.counts.get(id.index()).copied().unwrap_or(0)
    }

    pub fn sketch(&self) -> &Sketch {
        &self.current
    }

    /// Adds `n` result tuples with sketch `s`.
    pub(crate) fn add(&mut self, s: &Sketch, n: u64) {
        for id in s.iter() {
            let c = &mut self.counts[id.index()];
            if *c == 0 {
                self.current.insert(id);
            }
            *c += n;
        }
    }

    /// Applies an annotated delta and reports the fragments whose count
    /// crossed zero. The state is unchanged on error.
    pub fn apply(&mut self, delta: &[AnnotatedDeltaTuple]) -> Result<SketchDelta> {
        let width = self.width();
        let mut change: BTreeMap<usize, i64> = BTreeMap::new();
        for d in delta {
            if d.sketch.width() != width {
                return Err(EngineError::InconsistentDelta(format!(
                    "sketch width {} does not match {width} fragments",
                    d.sketch.width()
                )));
            }
            for id in d.sketch.iter() {
                *change.entry(id.index()).or_default() += d.signed();
            }
        }
        let mut next = Vec::with_capacity(change.len());
        for (&i, &c) in &change {
            let v = self.counts[i] as i64 + c;
            if v < 0 {
                return Err(EngineError::InconsistentDelta(format!(
                    "fragment {} would have count {v}",
                    FragmentId(i as u32)
                )));
            }
            next.push((i, v as u64));
        }
        let mut inserts = Sketch::empty(width);
        let mut deletes = Sketch::empty(width);
        for (i, v) in next {
            let id = FragmentId(i as u32);
            match (self.counts[i], v) {
                (0, v) if v > 0 => {
                    inserts.insert(id);
                    self.current.insert(id);
                }
                (c, 0) if c > 0 => {
                    deletes.insert(id);
                    self.current.remove(id);
                }
                _ => {}
            }
            self.counts[i] = v;
        }
        Ok(SketchDelta::new(inserts, deletes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sketchd_core::{tuple, Tag};

    #[test]
    fn counts_below_zero_are_rejected() {
        let mut m = MergeState::from_counts(vec![1, 0]);
        let d = AnnotatedDeltaTuple::new(Tag::Delete, tuple![1], Sketch::singleton(2, FragmentId(0)), 2);
        assert!(matches!(m.apply(&[d]), Err(EngineError::InconsistentDelta(_))));
        assert_eq!(m.counts(), &[1, 0]);
    }
}
