//! Shared fixtures for the benchmarks.

use lowrank_core::attention::AttentionWeights;
use lowrank_core::linalg::matrix_with_spectrum;
use lowrank_core::{DenseMatrix, Rng, SpectrumSpec};

/// `d x l` input with exponentially decaying spectrum.
pub fn decaying_input(d: usize, l: usize, seed: u64) -> DenseMatrix {
    let spec = SpectrumSpec::exponential(0.1, d).expect("valid spectrum");
    matrix_with_spectrum(d, l, &spec, &mut Rng::new(seed)).expect("valid shape")
}

pub fn weights(d: usize, heads: usize, seed: u64) -> AttentionWeights {
    AttentionWeights::random(d, heads, 1.0, 1.0, &mut Rng::new(seed)).expect("heads divide d")
}
