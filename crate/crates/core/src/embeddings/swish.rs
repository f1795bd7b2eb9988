use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg::DenseMatrix;
use crate::rng::Rng;

/// Gated embedding `φᵢ(x) = swish_β(wᵢx)·(vᵢx) = wᵢvᵢx² / (1 + e^{−βwᵢx})`.
///
/// Weights satisfy `|wᵢ| <= 1` and `|vᵢ| <= 1`, so `|wᵢvᵢ| <= 1` and every
/// pole of `φᵢ` sits at distance at least `π/β` from the real axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwishEmbedding {
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub beta: f64,
}

impl SwishEmbedding {
    pub fn new(w: Vec<f64>, v: Vec<f64>, beta: f64) -> Result<Self> {
        ensure!(!w.is_empty() && w.len() == v.len(), "w and v must be non-empty and equally long");
        ensure!(beta > 0.0 && beta.is_finite(), "beta must be positive, got {beta}");
        ensure!(w.iter().chain(&v).all(|x| x.abs() <= 1.0), "weights must satisfy |w_i| <= 1 and |v_i| <= 1");
        Ok(Self { w, v, beta })
    }

    /// Weights drawn uniformly from `[-1, 1]`.
    pub fn random(d: usize, beta: f64, rng: &mut Rng) -> Result<Self> {
        let w = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let v = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Self::new(w, v, beta)
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn phi(&self, i: usize, x: f64) -> f64 {
        let wx = self.w[i] * x;
        // swish(z) = z · sigmoid(βz), written to avoid overflow of e^{-βz}.
        let gate = if wx >= 0.0 {
            1.0 / (1.0 + (-self.beta * wx).exp())
        } else {
            let e = (self.beta * wx).exp();
            e / (1.0 + e)
        };
        wx * gate * self.v[i] * x
    }

    pub fn embed_scalars(&self, xs: &[f64]) -> Result<DenseMatrix> {
        ensure!(!xs.is_empty(), "need at least one input");
        Ok(DenseMatrix::from_fn(self.dim(), xs.len(), |i, j| self.phi(i, xs[j])))
    }
}
