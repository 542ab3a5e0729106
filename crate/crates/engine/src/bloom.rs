//! Bloom filters over join keys.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use sketchd_core::{AnnotatedDeltaTuple, Tuple};

const SEED_A: u64 = 0x9e37_79b9_7f4a_7c15;
const SEED_B: u64 = 0xc2b2_ae3d_27d4_eb4f;

#[derive(Debug, Clone, PartialEq)]
pub struct BloomFilter {
    bits: Vec<u64>,
    m: u64,
    h: u32,
}

impl BloomFilter {
    /// Sized for `n` distinct keys at false-positive rate `fpr`.
    pub fn with_capacity(n: usize, fpr: f64) -> Self {
        let n = n.max(1) as f64;
        let ln2 = std::f64::consts::LN_2;
        let m = ((-n * fpr.ln()) / (ln2 * ln2)).ceil().max(64.0) as u64;
        let h = ((m as f64 / n) * ln2).ceil().max(1.0) as u32;
        BloomFilter {
            bits: vec![0; m.div_ceil(64) as usize],
            m,
            h,
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.m
    }

    pub fn hash_count(&self) -> u32 {
        self.h
    }

    fn hashes(key: &Tuple) -> (u64, u64) {
        let mut a = DefaultHasher::new();
        a.write_u64(SEED_A);
        key.hash(&mut a);
        let mut b = DefaultHasher::new();
        b.write_u64(SEED_B);
        key.hash(&mut b);
        (a.finish(), b.finish() | 1)
    }

    fn positions(&self, key: &Tuple) -> impl Iterator<Item = u64> + '_ {
        let (h1, h2) = Self::hashes(key);
        (0..self.h as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % self.m)
    }

    pub fn insert(&mut self, key: &Tuple) {
        let (h1, h2) = Self::hashes(key);
        for i in 0..self.h as u64 {
            let p = h1.wrapping_add(i.wrapping_mul(h2)) % self.m;
            self.bits[(p / 64) as usize] |= 1 << (p % 64);
        }
    }

    pub fn contains(&self, key: &Tuple) -> bool {
        self.positions(key)
            .all(|p| self.bits[(p / 64) as usize] & (1 << (p % 64)) != 0)
    }
}

/// Drops delta rows whose join key is definitely absent from the filter.
pub fn prefilter(
    delta: &[AnnotatedDeltaTuple],
    filter: &BloomFilter,
    key: impl Fn(&Tuple) -> Tuple,
) -> Vec<AnnotatedDeltaTuple> {
    delta
        .iter()
        .filter(|d| filter.contains(&key(&d.tuple)))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use sketchd_core::tuple;

    #[test]
    fn sizing_follows_the_standard_formulas() {
        let f = BloomFilter::with_capacity(1000, 0.01);
        assert_eq!(f.bit_len(), 9586);
        assert_eq!(f.hash_count(), 7);
    }

    #[test]
    fn inserted_keys_are_found() {
        let mut f = BloomFilter::with_capacity(100, 0.01);
        for i in 0..100 {
            f.insert(&tuple![i]);
        }
        assert!((0..100).all(|i| f.contains(&tuple![i])));
    }
}
