use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::Rng;

/// Scalar activations satisfying `|ω(x)| <= |x|`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Checks `|ω(x)| <= |x|` on a symmetric grid over `[-10, 10]`.
    pub fn is_contractive_on_grid(self) -> bool {
        (0..=2000).map(|i| -10.0 + i as f64 * 0.01).all(|x| self.apply(x).abs() <= x.abs())
    }
}

/// Residual two-layer MLP `x ↦ W₃x + W₂ω(W₁x)` on patches of width `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpEmbedding {
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
    pub w3: DenseMatrix,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpEmbedding {
    pub fn new(w1: DenseMatrix, w2: DenseMatrix, w3: DenseMatrix, activation: Activation) -> Result<Self> {
        let (d_f, k) = w1.shape();
        let d = w2.rows();
        if w2.cols() != d_f || w3.shape() != (d, k) {
            return Err(Error::DimensionMismatch(format!(
                "W1 {:?}, W2 {:?}, W3 {:?} do not chain",
                w1.shape(),
                w2.shape(),
                w3.shape()
            )));
        }
        ensure!(d > k, "embedding dimension d = {d} must exceed patch width k = {k}");
        ensure!(activation.is_contractive_on_grid(), "activation is not contractive");
        Ok(Self { w1, w2, w3, activation })
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`.
    pub fn random(k: usize, d: usize, d_f: usize, activation: Activation, rng: &mut Rng) -> Result<Self> {
        ensure!(k >= 1 && d_f >= 1, "patch width and hidden width must be positive");
        let w1 = rng.gaussian_matrix(d_f, k, 1.0 / (k as f64).sqrt());
        let w2 = rng.gaussian_matrix(d, d_f, 1.0 / (d_f as f64).sqrt());
        let w3 = rng.gaussian_matrix(d, k, 1.0 / (k as f64).sqrt());
        Self::new(w1, w2, w3, activation)
    }

    pub fn patch_width(&self) -> usize {
        self.w1.cols()
    }

    pub fn dim(&self) -> usize {
        self.w2.rows()
    }

    /// Hidden activations `ω(W₁X)`.
    pub fn hidden(&self, x: &DenseMatrix) -> DenseMatrix {
        let a = self.activation;
        self.w1.matmul(x).map(|v| a.apply(v))
    }

    /// Embeds the columns of a `k x L` patch matrix.
    pub fn embed_patches(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.patch_width() {
            return Err(Error::DimensionMismatch(format!(
                "patch width {} but the MLP expects {}",
                x.rows(),
                self.patch_width()
            )));
        }
        Ok(self.w3.matmul(x).add(&self.w2.matmul(&self.hidden(x))))
    }
}
