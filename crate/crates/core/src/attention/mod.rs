//! Single- and multi-head attention, compression onto the vocabulary
//! subspace, and the constructions that bound what compression can achieve.

mod adversarial;
mod compress;
mod sparse;

pub use adversarial::{adversarial_incompressible, best_rank_value_candidate, random_value_candidates, value_replaced};
pub use compress::{compress_on_vocabulary, CompressedAttention, StabilityCheck};
pub use sparse::{
    headwise_sparse_sketch, shared_sketch_errors, sparse_sketch_instance, FactorPair, HeadFactors, SparseSketch,
    SparseSketchFactors,
};

use crate::error::{ensure, Error, Result};
use crate::linalg::{power_spectral_norm, DenseMatrix};
use crate::rng::Rng;

/// Query, key and value matrices (`d x d` each) split into `h` heads.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    wq: DenseMatrix,
    wk: DenseMatrix,
    wv: DenseMatrix,
    heads: usize,
}

/// Row slices of the three matrices belonging to one head.
#[derive(Clone, Debug)]
pub struct HeadWeights {
    pub q: DenseMatrix,
    pub k: DenseMatrix,
    pub v: DenseMatrix,
}

impl AttentionWeights {
    pub fn new(wq: DenseMatrix, wk: DenseMatrix, wv: DenseMatrix, heads: usize) -> Result<Self> {
        let d = wq.rows();
        for (name, m) in [("W_Q", &wq), ("W_K", &wk), ("W_V", &wv)] {
            if m.shape() != (d, d) {
                return Err(Error::DimensionMismatch(format!("{name} is {:?}, expected {d}x{d}", m.shape())));
            }
        }
        ensure!(heads >= 1 && d.is_multiple_of(heads), "d = {d} is not divisible by h = {heads}");
        Ok(Self { wq, wk, wv, heads })
    }

    /// Entries `N(0, qk_std²)` for `W_Q`, `W_K` and `N(0, v_std²)` for `W_V`.
    pub fn random(d: usize, heads: usize, qk_std: f64, v_std: f64, rng: &mut Rng) -> Result<Self> {
        let wq = rng.gaussian_matrix(d, d, qk_std);
        let wk = rng.gaussian_matrix(d, d, qk_std);
        let wv = rng.gaussian_matrix(d, d, v_std);
        Self::new(wq, wk, wv, heads)
    }

    pub fn wq(&self) -> &DenseMatrix {
        &self.wq
    }

    pub fn wk(&self) -> &DenseMatrix {
        &self.wk
    }

    pub fn wv(&self) -> &DenseMatrix {
        &self.wv
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    /// Same matrices, different head count.
    pub fn with_heads(&self, heads: usize) -> Result<Self> {
        Self::new(self.wq.clone(), self.wk.clone(), self.wv.clone(), heads)
    }

    /// Rows `i·d_h .. (i+1)·d_h` of each matrix (0-based head index).
    pub fn head(&self, i: usize) -> HeadWeights {
        let dh = self.head_dim();
        let (a, b) = (i * dh, (i + 1) * dh);
        HeadWeights { q: self.wq.row_block(a, b), k: self.wk.row_block(a, b), v: self.wv.row_block(a, b) }
    }

    /// `‖W_Q^{(i)ᵀ} W_K^{(i)}‖₂` per head.
    pub fn head_qk_norms(&self) -> Result<Vec<f64>> {
        (0..self.heads)
            .map(|i| {
                let hw = self.head(i);
                power_spectral_norm(&hw.q.tr_matmul(&hw.k))
            })
            .collect()
    }

    /// `‖W_V^{(i)}‖₂` per head.
    pub fn head_v_norms(&self) -> Result<Vec<f64>> {
        (0..self.heads).map(|i| power_spectral_norm(&self.head(i).v)).collect()
    }

    /// True when every head has `‖W_Q^{(i)ᵀ}W_K^{(i)}‖₂ <= c√d_h` and
    /// `‖W_V^{(i)}‖₂ <= c√d_h`.
    pub fn within_norm_bound(&self, c: f64) -> Result<bool> {
        let limit = c * (self.head_dim() as f64).sqrt();
        Ok(self.head_qk_norms()?.iter().chain(&self.head_v_norms()?).all(|&n| n <= limit))
    }
}

/// Column-wise softmax with per-column max subtraction.
pub fn softmax_cols(t: &DenseMatrix) -> DenseMatrix {
    let (m, n) = t.shape();
    let mut max = vec![f64::NEG_INFINITY; n];
    for i in 0..m {
        for (mx, &v) in max.iter_mut().zip(t.row(i)) {
            *mx = mx.max(v);
        }
    }
    let mut out = DenseMatrix::zeros(m, n);
    let mut sums = vec![0.0; n];
    for i in 0..m {
        let src = t.row(i);
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            let e = (src[j] - max[j]).exp();
            *o = e;
            sums[j] += e;
        }
    }
    for i in 0..m {
        for (o, s) in out.row_mut(i).iter_mut().zip(&sums) {
            *o /= s;
        }
    }
    out
}

/// `softmax(Uᵀ W_qᵀ W_k U · scale)` for one head.
pub fn attention_scores(u: &DenseMatrix, q: &DenseMatrix, k: &DenseMatrix, scale: f64) -> DenseMatrix {
    let qu = q.matmul(u);
    let ku = k.matmul(u);
    softmax_cols(&qu.tr_matmul(&ku).scale(scale))
}

fn head_output(u: &DenseMatrix, hw: &HeadWeights, scale: f64) -> DenseMatrix {
    let g = attention_scores(u, &hw.q, &hw.k, scale);
    hw.v.matmul(u).matmul(&g)
}

fn check_input(u: &DenseMatrix, d: usize) -> Result<()> {
    if u.rows() != d {
        return Err(Error::DimensionMismatch(format!("input has {} rows, weights expect {d}", u.rows())));
    }
    Ok(())
}

/// `W_V U softmax(Uᵀ W_Qᵀ W_K U / √d)` for single-head weights.
pub fn attention(u: &DenseMatrix, w: &AttentionWeights) -> Result<DenseMatrix> {
    ensure!(w.heads() == 1, "attention expects a single head, got {}", w.heads());
    check_input(u, w.dim())?;
    let hw = HeadWeights { q: w.wq.clone(), k: w.wk.clone(), v: w.wv.clone() };
    Ok(head_output(u, &hw, 1.0 / (w.dim() as f64).sqrt()))
}

/// Vertical concatenation of the per-head outputs, each scaled by `1/√d_h`.
pub fn mh_attention(u: &DenseMatrix, w: &AttentionWeights) -> Result<DenseMatrix> {
    check_input(u, w.dim())?;
    let scale = 1.0 / (w.head_dim() as f64).sqrt();
    let outs: Vec<DenseMatrix> = (0..w.heads()).map(|i| head_output(u, &w.head(i), scale)).collect();
    Ok(DenseMatrix::vstack(&outs.iter().collect::<Vec<_>>()))
}
