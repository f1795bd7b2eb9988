//! Seeded, reproducible random streams.
//!
//! Every stream is a ChaCha20 generator (a counter-based cipher stream) whose
//! 256-bit key is expanded from a 64-bit seed with SplitMix64. Sub-streams are
//! keyed by `(seed, label, index)`: the label is folded with 64-bit FNV-1a and
//! mixed into the parent seed, so a sub-stream never depends on how many draws
//! the parent has already made.

use rand::seq::index;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::linalg::DenseMatrix;

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SPLITMIX_MUL1: u64 = 0xBF58_476D_1CE4_E5B9;
const SPLITMIX_MUL2: u64 = 0x94D0_49BB_1331_11EB;
const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(SPLITMIX_MUL1);
    z = (z ^ (z >> 27)).wrapping_mul(SPLITMIX_MUL2);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Deterministic random stream identified by a 64-bit key.
#[derive(Clone, Debug)]
pub struct Rng {
    key: u64,
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut bytes = [0u8; 32];
        for chunk in bytes.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Self { key: seed, inner: ChaCha20Rng::from_seed(bytes) }
    }

    /// The key this stream was created from.
    pub fn key(&self) -> u64 {
        self.key
    }

    /// Independent stream for `(label, index)`, derived from this stream's key only.
    pub fn substream(&self, label: &str, index: u64) -> Rng {
        let mut state = self.key ^ fnv1a(label).rotate_left(17);
        let a = splitmix64(&mut state);
        let mut state = a ^ index.wrapping_mul(SPLITMIX_MUL2);
        Rng::new(splitmix64(&mut state))
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// `amount` distinct indices from `0..n`, in sampling order.
    pub fn distinct_indices(&mut self, n: usize, amount: usize) -> Vec<usize> {
        index::sample(&mut self.inner, n, amount).into_vec()
    }

    /// Matrix with i.i.d. `N(0, std²)` entries.
    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize, std: f64) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| std * self.normal())
    }

    pub fn gaussian_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.normal()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..32 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn substream_ignores_parent_position() {
        let parent = Rng::new(11);
        let mut advanced = parent.clone();
        for _ in 0..100 {
            advanced.normal();
        }
        let mut x = parent.substream("trial", 3);
        let mut y = advanced.substream("trial", 3);
        assert_eq!(x.normal().to_bits(), y.normal().to_bits());
    }

    #[test]
    fn substreams_differ_by_label_and_index() {
        let parent = Rng::new(11);
        let a = parent.substream("trial", 0).normal();
        let b = parent.substream("trial", 1).normal();
        let c = parent.substream("other", 0).normal();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn distinct_indices_are_distinct() {
        let mut r = Rng::new(1);
        let mut idx = r.distinct_indices(50, 20);
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 20);
        assert!(idx.iter().all(|&i| i < 50));
    }
}
