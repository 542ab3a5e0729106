//! Provenance sketches as fixed-width bitsets over global fragment ids.

use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Dense index into a catalog's global fragment space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FragmentId(pub u32);

impl FragmentId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for FragmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

type Words = SmallVec<[u64; 2]>;

/// A set of fragments. All sketches built from one catalog share the same
/// width; ordering compares the raw words and is only used for deterministic
/// tie-breaking.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sketch {
    width: u32,
    words: Words,
}

impl Sketch {
    pub fn empty(width: u32) -> Self {
        let n = (width as usize).div_ceil(64);
        Sketch {
            width,
            words: SmallVec::from_elem(0, n),
        }
    }

    pub fn full(width: u32) -> Self {
        let mut s = Sketch::empty(width);
        for i in 0..width {
            s.insert(FragmentId(i));
        }
        s
    }

    pub fn singleton(width: u32, id: FragmentId) -> Self {
        let mut s = Sketch::empty(width);
        s.insert(id);
        s
    }

    pub fn from_ids(width: u32, ids: impl IntoIterator<Item = FragmentId>) -> Self {
        let mut s = Sketch::empty(width);
        for id in ids {
            s.insert(id);
        }
        s
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn insert(&mut self, id: FragmentId) {
        assert!(id.0 < self.width, "fragment {id} outside sketch width {}", self.width);
        self.words[id.index() / 64] |= 1 << (id.index() % 64);
    }

    pub fn remove(&mut self, id: FragmentId) {
        if id.0 < self.width {
            self.words[id.index() / 64] &= !(1 << (id.index() % 64));
        }
    }

    pub fn contains(&self, id: FragmentId) -> bool {
        id.0 < self.width && self.words[id.index() / 64] & (1 << (id.index() % 64)) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    /// Number of fragments in the sketch.
    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn union_with(&mut self, other: &Sketch) {
        debug_assert_eq!(self.width, other.width);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
    }

    pub fn union(&self, other: &Sketch) -> Sketch {
        let mut out = self.clone();
        out.union_with(other);
        out
    }

    pub fn intersection(&self, other: &Sketch) -> Sketch {
        let mut out = self.clone();
        for (a, b) in out.words.iter_mut().zip(&other.words) {
            *a &= *b;
        }
        out
    }

    pub fn difference(&self, other: &Sketch) -> Sketch {
        let mut out = self.clone();
        for (a, b) in out.words.iter_mut().zip(&other.words) {
            *a &= !*b;
        }
        out
    }

    pub fn is_subset(&self, other: &Sketch) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & !b == 0)
    }

    pub fn is_disjoint(&self, other: &Sketch) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }

    /// Fragment ids in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = FragmentId> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros();
                bits &= bits - 1;
                Some(FragmentId(wi as u32 * 64 + tz))
            })
        })
    }

    pub fn ids(&self) -> Vec<FragmentId> {
        self.iter().collect()
    }
}

impl fmt::Debug for Sketch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|i| i.0)).finish()
    }
}

impl fmt::Display for Sketch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Serialized as `{"width": F, "fragments": [ids...]}`.
impl Serialize for Sketch {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        SketchRepr {
            width: self.width,
            fragments: self.iter().map(|f| f.0).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Sketch {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = SketchRepr::deserialize(deserializer)?;
        if let Some(bad) = repr.fragments.iter().find(|f| **f >= repr.width) {
            return Err(serde::de::Error::custom(format!(
                "fragment {bad} outside width {}",
                repr.width
            )));
        }
        Ok(Sketch::from_ids(
            repr.width,
            repr.fragments.into_iter().map(FragmentId),
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct SketchRepr {
    width: u32,
    fragments: Vec<u32>,
}

/// Fragments added to and removed from a sketch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchDelta {
    pub inserts: Sketch,
    pub deletes: Sketch,
}

impl SketchDelta {
    pub fn empty(width: u32) -> Self {
        SketchDelta {
            inserts: Sketch::empty(width),
            deletes: Sketch::empty(width),
        }
    }

    pub fn new(inserts: Sketch, deletes: Sketch) -> Result<Self> {
        if !inserts.is_disjoint(&deletes) {
            return Err(Error::InconsistentDelta(format!(
                "fragments {} both inserted and deleted",
                inserts.intersection(&deletes)
            )));
        }
        Ok(SketchDelta { inserts, deletes })
    }

    pub fn is_empty(&self) -> bool {
        self.inserts.is_empty() && self.deletes.is_empty()
    }

    /// The delta that turns `from` into `to`.
    pub fn between(from: &Sketch, to: &Sketch) -> Self {
        SketchDelta {
            inserts: to.difference(from),
            deletes: from.difference(to),
        }
    }

    /// Sequential composition: applying `self` then `next`.
    pub fn then(&self, next: &SketchDelta) -> SketchDelta {
        SketchDelta {
            inserts: self
                .inserts
                .difference(&next.deletes)
                .union(&next.inserts.difference(&self.deletes)),
            deletes: self
                .deletes
                .difference(&next.inserts)
                .union(&next.deletes.difference(&self.inserts)),
        }
    }
}

impl fmt::Display for SketchDelta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "+{} -{}", self.inserts, self.deletes)
    }
}

/// `P ⊎ ΔP = (P − deletes) ∪ inserts`, rejecting deltas that do not fit `P`.
pub fn sketch_apply_delta(sketch: &Sketch, delta: &SketchDelta) -> Result<Sketch> {
    if !delta.deletes.is_subset(sketch) {
        return Err(Error::InconsistentDelta(format!(
            "deleting {} which is not in {sketch}",
            delta.deletes.difference(sketch)
        )));
    }
    if !delta.inserts.is_disjoint(sketch) {
        return Err(Error::InconsistentDelta(format!(
            "inserting {} which is already in {sketch}",
            delta.inserts.intersection(sketch)
        )));
    }
    Ok(sketch.difference(&delta.deletes).union(&delta.inserts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(ids: &[u32]) -> Sketch {
        Sketch::from_ids(4, ids.iter().copied().map(FragmentId))
    }

    #[test]
    fn stale_sketch_gains_missing_range() {
        // ρ2..ρ4 are ids 1..3
        let p = s(&[2, 3]);
        let d = SketchDelta::new(s(&[1]), s(&[])).unwrap();
        assert_eq!(sketch_apply_delta(&p, &d).unwrap(), s(&[1, 2, 3]));
    }

    #[test]
    fn empty_delta_is_identity() {
        let p = s(&[0, 3]);
        assert_eq!(sketch_apply_delta(&p, &SketchDelta::empty(4)).unwrap(), p);
    }

    #[test]
    fn deleting_a_fragment() {
        let d = SketchDelta::new(s(&[]), s(&[0])).unwrap();
        assert_eq!(sketch_apply_delta(&s(&[0, 1]), &d).unwrap(), s(&[1]));
    }

    #[test]
    fn inconsistent_deltas_are_rejected() {
        let del_missing = SketchDelta::new(s(&[]), s(&[2])).unwrap();
        assert!(sketch_apply_delta(&s(&[0]), &del_missing).is_err());
        let ins_present = SketchDelta::new(s(&[0]), s(&[])).unwrap();
        assert!(sketch_apply_delta(&s(&[0]), &ins_present).is_err());
        assert!(SketchDelta::new(s(&[1]), s(&[1])).is_err());
    }

    #[test]
    fn wide_sketches_span_words() {
        let mut p = Sketch::empty(200);
        p.insert(FragmentId(0));
        p.insert(FragmentId(64));
        p.insert(FragmentId(199));
        assert_eq!(p.ids(), vec![FragmentId(0), FragmentId(64), FragmentId(199)]);
        assert_eq!(p.len(), 3);
        assert!(!p.contains(FragmentId(200)));
    }

    fn arb_sketch() -> impl Strategy<Value = Sketch> {
        prop::collection::btree_set(0u32..70, 0..20)
            .prop_map(|ids| Sketch::from_ids(70, ids.into_iter().map(FragmentId)))
    }

    proptest! {
        #[test]
        fn insert_then_delete_restores(p in arb_sketch(), x in arb_sketch()) {
            let x = x.difference(&p);
            let grown = sketch_apply_delta(&p, &SketchDelta::new(x.clone(), Sketch::empty(70)).unwrap()).unwrap();
            let back = sketch_apply_delta(&grown, &SketchDelta::new(Sketch::empty(70), x).unwrap()).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn composition_matches_sequential_application(a in arb_sketch(), b in arb_sketch(), c in arb_sketch()) {
            let d1 = SketchDelta::between(&a, &b);
            let d2 = SketchDelta::between(&b, &c);
            let composed = d1.then(&d2);
            prop_assert_eq!(sketch_apply_delta(&a, &composed).unwrap(), c);
        }
    }
}
