use serde::{Deserialize, Serialize};

use super::schedule::RankSchedule;
use crate::attention::{mh_attention, AttentionWeights};
use crate::embeddings::EmbeddingSpec;
use crate::error::{ensure, Error, Result};
use crate::linalg::{spectral_norm, svd, DenseMatrix};
use crate::rng::Rng;

/// One attention matrix, stored dense or as `left · right`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "storage", rename_all = "kebab-case")]
pub enum AttentionMatrix {
    Dense { w: DenseMatrix },
    Factored { left: DenseMatrix, right: DenseMatrix },
}

impl AttentionMatrix {
    pub fn realize(&self) -> DenseMatrix {
        match self {
            AttentionMatrix::Dense { w } => w.clone(),
            AttentionMatrix::Factored { left, right } => left.matmul(right),
        }
    }

    /// Stored parameter count.
    pub fn params(&self) -> usize {
        match self {
            AttentionMatrix::Dense { w } => w.rows() * w.cols(),
            AttentionMatrix::Factored { left, right } => left.rows() * left.cols() + right.rows() * right.cols(),
        }
    }

    /// Inner dimension of the factorization, or `d` when dense.
    pub fn rank_bound(&self) -> usize {
        match self {
            AttentionMatrix::Dense { w } => w.rows(),
            AttentionMatrix::Factored { left, .. } => left.cols(),
        }
    }

    fn dim(&self) -> (usize, usize) {
        match self {
            AttentionMatrix::Dense { w } => w.shape(),
            AttentionMatrix::Factored { left, right } => (left.rows(), right.cols()),
        }
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            AttentionMatrix::Dense { w } => vec![w.as_mut_slice()],
            AttentionMatrix::Factored { left, right } => vec![left.as_mut_slice(), right.as_mut_slice()],
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        match self {
            AttentionMatrix::Dense { w } => vec![w.as_slice()],
            AttentionMatrix::Factored { left, right } => vec![left.as_slice(), right.as_slice()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyLayer {
    pub q: AttentionMatrix,
    pub k: AttentionMatrix,
    pub v: AttentionMatrix,
}

impl ToyLayer {
    fn matrices(&self) -> [&AttentionMatrix; 3] {
        [&self.q, &self.k, &self.v]
    }

    fn matrices_mut(&mut self) -> [&mut AttentionMatrix; 3] {
        [&mut self.q, &mut self.k, &mut self.v]
    }

    pub fn realize(&self, heads: usize) -> Result<AttentionWeights> {
        AttentionWeights::new(self.q.realize(), self.k.realize(), self.v.realize(), heads)
    }
}

/// Shape of a toy model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyDims {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    /// Residual scaling `1/√depth`.
    pub depth: usize,
}

/// Forecaster: embed patches, apply residual attention layers, read the
/// last token out to a scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub embedding: EmbeddingSpec,
    pub layers: Vec<ToyLayer>,
    pub depth: usize,
    pub heads: usize,
    /// `1 x d`.
    pub readout: DenseMatrix,
}

impl ToyModel {
    /// Dense layers with `N(0, 1/d)` entries and a `N(0, 1/d)` readout.
    pub fn dense(embedding: EmbeddingSpec, dims: &ToyDims, rng: &mut Rng) -> Result<Self> {
        check_dims(&embedding, dims)?;
        let d = dims.d;
        let s = 1.0 / (d as f64).sqrt();
        let mut draw = || AttentionMatrix::Dense { w: rng.gaussian_matrix(d, d, s) };
        let layers = (0..dims.layers).map(|_| ToyLayer { q: draw(), k: draw(), v: draw() }).collect();
        let readout = rng.gaussian_matrix(1, d, s);
        Self::new(embedding, layers, dims.depth, dims.heads, readout)
    }

    pub fn new(
        embedding: EmbeddingSpec,
        layers: Vec<ToyLayer>,
        depth: usize,
        heads: usize,
        readout: DenseMatrix,
    ) -> Result<Self> {
        let m = Self { embedding, layers, depth, heads, readout };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        ensure!(self.depth >= 1, "depth must be positive");
        ensure!(self.heads >= 1 && d.is_multiple_of(self.heads), "d = {d} is not divisible by h = {}", self.heads);
        if self.readout.shape() != (1, d) {
            return Err(Error::DimensionMismatch(format!("readout is {:?}, expected 1x{d}", self.readout.shape())));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            for m in layer.matrices() {
                if m.dim() != (d, d) {
                    return Err(Error::DimensionMismatch(format!(
                        "layer {i} has a {:?} matrix, expected {d}x{d}",
                        m.dim()
                    )));
                }
                if let AttentionMatrix::Factored { left, right } = m {
                    ensure!(left.cols() == right.rows(), "layer {i} factors have mismatched inner dimensions");
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.embedding.dim()
    }

    pub fn dims(&self) -> ToyDims {
        ToyDims { d: self.dim(), layers: self.layers.len(), heads: self.heads, depth: self.depth }
    }

    /// Realized weights of every layer.
    pub fn realized_layers(&self) -> Result<Vec<AttentionWeights>> {
        self.layers.iter().map(|l| l.realize(self.heads)).collect()
    }

    pub fn forward(&self, series: &[f64]) -> Result<f64> {
        let weights = self.realized_layers()?;
        self.forward_with(&weights, series)
    }

    /// Forecasts for a batch, realizing the layers once.
    pub fn forward_batch(&self, batch: &[Vec<f64>]) -> Result<Vec<f64>> {
        let weights = self.realized_layers()?;
        batch.iter().map(|s| self.forward_with(&weights, s)).collect()
    }

    fn forward_with(&self, weights: &[AttentionWeights], series: &[f64]) -> Result<f64> {
        self.forward_embedded(weights, self.embed(series)?)
    }

    /// Embedded series, checked for finite values.
    pub fn embed(&self, series: &[f64]) -> Result<DenseMatrix> {
        ensure!(!series.is_empty(), "series must be non-empty");
        if let Some(t) = series.iter().position(|x| !x.is_finite()) {
            return Err(Error::Precondition(format!("series value {t} is not finite")));
        }
        self.embedding.embed_series(series)
    }

    /// Forecast from an already embedded series and realized layers.
    pub fn forward_embedded(&self, weights: &[AttentionWeights], mut x: DenseMatrix) -> Result<f64> {
        let scale = 1.0 / (self.depth as f64).sqrt();
        for w in weights {
            x = x.add_scaled(&mh_attention(&x, w)?, scale);
        }
        let last = x.column(x.cols() - 1);
        Ok(self.readout.row(0).iter().zip(&last).map(|(a, b)| a * b).sum())
    }

    /// Attention parameters as stored.
    pub fn attention_params(&self) -> usize {
        self.layers.iter().flat_map(|l| l.matrices()).map(AttentionMatrix::params).sum()
    }

    /// Number of trainable values: attention storage plus the readout.
    pub fn trainable_len(&self) -> usize {
        self.attention_params() + self.readout.cols()
    }

    /// Flattened attention storage followed by the readout.
    pub fn trainable(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_len());
        for l in &self.layers {
            for m in l.matrices() {
                m.slices().into_iter().for_each(|s| out.extend_from_slice(s));
            }
        }
        out.extend_from_slice(self.readout.as_slice());
        out
    }

    pub fn set_trainable(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.trainable_len() {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector has {} entries, model has {}",
                theta.len(),
                self.trainable_len()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            for m in l.matrices_mut() {
                for s in m.slices_mut() {
                    s.copy_from_slice(&theta[at..at + s.len()]);
                    at += s.len();
                }
            }
        }
        self.readout.as_mut_slice().copy_from_slice(&theta[at..]);
        Ok(())
    }
}

fn check_dims(embedding: &EmbeddingSpec, dims: &ToyDims) -> Result<()> {
    ensure!(embedding.dim() == dims.d, "embedding dimension {} differs from d = {}", embedding.dim(), dims.d);
    ensure!(
        dims.heads >= 1 && dims.d.is_multiple_of(dims.heads),
        "d = {} is not divisible by h = {}",
        dims.d,
        dims.heads
    );
    ensure!(dims.depth >= 1, "depth must be positive");
    Ok(())
}

/// Layer `i` realized as products of `d x d̃ᵢ` and `d̃ᵢ x d` factors, each
/// with `N(0, 1/d)` entries.
pub fn build_factored(
    embedding: EmbeddingSpec,
    dims: &ToyDims,
    schedule: &RankSchedule,
    rng: &mut Rng,
) -> Result<ToyModel> {
    check_dims(&embedding, dims)?;
    let d = dims.d;
    for i in 0..dims.layers {
        let r = schedule.rank_at(i);
        ensure!(r <= d, "schedule gives rank {r} at layer {i}, above d = {d}");
    }
    let s = 1.0 / (d as f64).sqrt();
    let layers = (0..dims.layers)
        .map(|i| {
            let r = schedule.rank_at(i);
            let mut draw = || AttentionMatrix::Factored {
                left: rng.gaussian_matrix(d, r, s),
                right: rng.gaussian_matrix(r, d, s),
            };
            ToyLayer { q: draw(), k: draw(), v: draw() }
        })
        .collect();
    let readout = rng.gaussian_matrix(1, d, s);
    ToyModel::new(embedding, layers, dims.depth, dims.heads, readout)
}

/// Compressed attention parameters over original ones, counting
/// `min(2rd, d²)` for a factored matrix of inner dimension `r`.
pub fn size_ratio(compressed: &ToyModel, original: &ToyModel) -> Result<f64> {
    ensure!(
        compressed.dims() == original.dims(),
        "models differ in shape: {:?} vs {:?}",
        compressed.dims(),
        original.dims()
    );
    let count = |m: &ToyModel| -> usize {
        let d2 = m.dim() * m.dim();
        m.layers.iter().flat_map(|l| l.matrices()).map(|a| a.params().min(d2)).sum()
    };
    let before = count(original);
    ensure!(before > 0, "model has no attention parameters");
    Ok(count(compressed) as f64 / before as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompressionReport {
    pub eps: f64,
    /// Kept ranks `[q, k, v]` per layer.
    pub ranks: Vec<[usize; 3]>,
    /// `‖W − W̃‖₂ / ‖W‖₂` per layer and matrix.
    pub errors: Vec<[f64; 3]>,
    pub params_before: usize,
    pub params_after: usize,
    pub ratio: f64,
    /// Largest forecast change over the probe batch.
    pub probe_deviation: f64,
}

/// Deterministic probe series used to measure the forward change.
pub fn probe_batch(patch_width: usize) -> Vec<Vec<f64>> {
    (0..8)
        .map(|j| (0..16 * patch_width).map(|t| (0.3 * t as f64 + 0.7 * j as f64).sin() + 0.1 * j as f64).collect())
        .collect()
}

/// Truncates every attention matrix to its `eps`-rank. Matrices whose kept
/// rank `r` has `2rd >= d²` stay dense; all others are stored as
/// `(U_r Σ_r^{1/2}, Σ_r^{1/2} V_rᵀ)`.
pub fn compress_model(m: &ToyModel, eps: f64) -> Result<(ToyModel, CompressionReport)> {
    ensure!(eps > 0.0, "eps must be positive, got {eps}");
    ensure!(
        m.layers.iter().flat_map(|l| l.matrices()).all(|a| matches!(a, AttentionMatrix::Dense { .. })),
        "compress_model expects a dense model"
    );
    let d = m.dim();
    let mut out = m.clone();
    let mut ranks = Vec::with_capacity(m.layers.len());
    let mut errors = Vec::with_capacity(m.layers.len());
    for layer in &mut out.layers {
        let mut r3 = [0; 3];
        let mut e3 = [0.0; 3];
        for (slot, a) in layer.matrices_mut().into_iter().enumerate() {
            let w = a.realize();
            let s = svd(&w)?;
            let s1 = s.singular_values[0];
            let r = s.singular_values.iter().filter(|&&v| v > eps * s1).count();
            let replaced = if r == d {
                AttentionMatrix::Dense { w: w.clone() }
            } else if 2 * r * d >= d * d {
                AttentionMatrix::Dense { w: s.rank_r_reconstruction(r) }
            } else {
                let root: Vec<f64> = s.singular_values[..r].iter().map(|v| v.sqrt()).collect();
                let left = DenseMatrix::from_fn(d, r, |i, j| s.left_vectors[(i, j)] * root[j]);
                let right = DenseMatrix::from_fn(r, d, |i, j| s.right_vectors[(j, i)] * root[i]);
                AttentionMatrix::Factored { left, right }
            };
            let norm = if s1 > 0.0 { s1 } else { 1.0 };
            e3[slot] = spectral_norm(&w.sub(&replaced.realize()))? / norm;
            r3[slot] = r;
            *a = replaced;
        }
        ranks.push(r3);
        errors.push(e3);
    }
    let probe = probe_batch(m.embedding.patch_width());
    let before = m.forward_batch(&probe)?;
    let after = out.forward_batch(&probe)?;
    let probe_deviation = before.iter().zip(&after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let report = CompressionReport {
        eps,
        ranks,
        errors,
        params_before: m.attention_params(),
        params_after: out.attention_params(),
        ratio: size_ratio(&out, m)?,
        probe_deviation,
    };
    Ok((out, report))
}

/// Dense model rewritten with factors from the exact SVD of each matrix at
/// its numerical rank.
pub fn factor_exactly(m: &ToyModel) -> Result<ToyModel> {
    let mut out = m.clone();
    for layer in &mut out.layers {
        for a in layer.matrices_mut() {
            let w = a.realize();
            let s = svd(&w)?;
            let tol = w.rows() as f64 * f64::EPSILON * s.singular_values[0];
            let r = s.singular_values.iter().filter(|&&v| v > tol).count().max(1);
            let left = DenseMatrix::from_fn(w.rows(), r, |i, j| s.left_vectors[(i, j)] * s.singular_values[j]);
            let right = DenseMatrix::from_fn(r, w.cols(), |i, j| s.right_vectors[(j, i)]);
            *a = AttentionMatrix::Factored { left, right };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{make_chebyshev_embedding, Activation, MlpEmbedding};

    fn cheb(d: usize, rng: &mut Rng) -> EmbeddingSpec {
        EmbeddingSpec::Chebyshev(make_chebyshev_embedding(3, d, 2.0, rng).unwrap())
    }

    fn series(n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|t| (0.4 * t as f64 + phase).sin()).collect()
    }

    #[test]
    fn zero_readout_gives_zero() {
        let mut rng = Rng::new(1);
        let dims = ToyDims { d: 8, layers: 2, heads: 2, depth: 2 };
        let mut m = ToyModel::dense(cheb(8, &mut rng), &dims, &mut rng).unwrap();
        m.readout = DenseMatrix::zeros(1, 8);
        assert_eq!(m.forward(&series(10, 0.3)).unwrap(), 0.0);
        assert!(m.forward(&[1.0, f64::NAN]).is_err());
        assert!(m.forward(&[]).is_err());
    }

    #[test]
    fn matches_step_by_step() {
        let mut rng = Rng::new(2);
        let emb = EmbeddingSpec::Mlp(MlpEmbedding::random(2, 8, 6, Activation::Relu, &mut rng).unwrap());
        let dims = ToyDims { d: 8, layers: 2, heads: 4, depth: 3 };
        let m = ToyModel::dense(emb.clone(), &dims, &mut rng).unwrap();
        let xs = series(13, 0.1);
        let mut x = emb.embed_series(&xs).unwrap();
        assert_eq!(x.cols(), 6);
        for l in &m.layers {
            let w = l.realize(4).unwrap();
            x = x.add(&mh_attention(&x, &w).unwrap().scale(1.0 / 3f64.sqrt()));
        }
        let expect: f64 = (0..8).map(|i| m.readout[(0, i)] * x[(i, 5)]).sum();
        assert!((m.forward(&xs).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn exact_factoring_is_transparent() {
        let mut rng = Rng::new(3);
        let dims = ToyDims { d: 8, layers: 3, heads: 2, depth: 3 };
        let m = ToyModel::dense(cheb(8, &mut rng), &dims, &mut rng).unwrap();
        let f = factor_exactly(&m).unwrap();
        for p in [0.0, 0.5, 2.0] {
            let xs = series(12, p);
            assert!((m.forward(&xs).unwrap() - f.forward(&xs).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn factored_ranks_follow_schedule() {
        let mut rng = Rng::new(4);
        let dims = ToyDims { d: 16, layers: 12, heads: 2, depth: 12 };
        let m = build_factored(cheb(16, &mut rng), &dims, &RankSchedule::new(3.0, 0.27).unwrap(), &mut rng).unwrap();
        let ranks: Vec<usize> = m.layers.iter().map(|l| l.q.rank_bound()).collect();
        assert_eq!(ranks, [3, 4, 5, 5, 5, 5, 6, 6, 6, 6, 6, 6]);
        let one = build_factored(cheb(16, &mut rng), &dims, &RankSchedule::new(1.0, 0.0).unwrap(), &mut rng).unwrap();
        for l in &one.layers {
            let s = crate::linalg::singular_values(&l.v.realize()).unwrap();
            assert!(s[1] < 1e-12 * s[0]);
        }
        let big = RankSchedule::new(10.0, 1.0).unwrap();
        assert!(build_factored(cheb(16, &mut rng), &dims, &big, &mut rng).is_err());
    }

    #[test]
    fn ratio_arithmetic() {
        let mut rng = Rng::new(5);
        let d = 16;
        let dims = ToyDims { d, layers: 2, heads: 2, depth: 2 };
        let dense = ToyModel::dense(cheb(d, &mut rng), &dims, &mut rng).unwrap();
        assert_eq!(size_ratio(&dense, &dense).unwrap(), 1.0);
        let quarter =
            build_factored(cheb(d, &mut rng), &dims, &RankSchedule::new(4.0, 0.0).unwrap(), &mut rng).unwrap();
        assert_eq!(size_ratio(&quarter, &dense).unwrap(), 0.5);
        let full = build_factored(cheb(d, &mut rng), &dims, &RankSchedule::new(16.0, 0.0).unwrap(), &mut rng).unwrap();
        assert_eq!(size_ratio(&full, &dense).unwrap(), 1.0);
    }

    #[test]
    fn loose_eps_keeps_everything() {
        let mut rng = Rng::new(6);
        let dims = ToyDims { d: 8, layers: 2, heads: 2, depth: 2 };
        let m = ToyModel::dense(cheb(8, &mut rng), &dims, &mut rng).unwrap();
        let (c, rep) = compress_model(&m, 1e-12).unwrap();
        assert_eq!(rep.ratio, 1.0);
        assert_eq!(rep.probe_deviation, 0.0);
        assert_eq!(c, m);
    }

    #[test]
    fn low_rank_weights_compress_to_a_quarter() {
        let mut rng = Rng::new(7);
        let d = 16;
        let dims = ToyDims { d, layers: 2, heads: 2, depth: 2 };
        let low = build_factored(cheb(d, &mut rng), &dims, &RankSchedule::new(2.0, 0.0).unwrap(), &mut rng).unwrap();
        let mut dense = low.clone();
        for l in &mut dense.layers {
            for a in l.matrices_mut() {
                *a = AttentionMatrix::Dense { w: a.realize() };
            }
        }
        let (c, rep) = compress_model(&dense, 1e-8).unwrap();
        assert!(rep.ranks.iter().all(|r| *r == [2, 2, 2]));
        assert_eq!(rep.ratio, 0.25);
        assert!(rep.probe_deviation < 1e-9);
        assert_eq!(size_ratio(&c, &dense).unwrap(), 0.25);
    }
}
