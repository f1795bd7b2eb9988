use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg::{random_orthonormal_columns, DenseMatrix};
use crate::rng::Rng;

/// `T_j(x)` by the three-term recurrence. `x` must lie in `[-1, 1]` up to
/// a `1e-12` slack; the recurrence is unstable outside.
pub fn chebyshev_eval(j: usize, x: f64) -> Result<f64> {
    ensure!(x.abs() <= 1.0 + 1e-12, "Chebyshev argument {x} outside [-1, 1]");
    Ok(chebyshev_unchecked(j, x))
}

fn chebyshev_unchecked(j: usize, x: f64) -> f64 {
    match j {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut prev, mut cur) = (1.0, x);
            for _ in 1..j {
                let next = 2.0 * x * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Rank-`k` embedding `x ↦ Σ_{j=1..k} T_j(x / x_max) u_j` with orthonormal
/// directions `u_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevEmbedding {
    pub x_max: f64,
    pub directions: DenseMatrix,
}

impl ChebyshevEmbedding {
    pub fn rank(&self) -> usize {
        self.directions.cols()
    }

    pub fn dim(&self) -> usize {
        self.directions.rows()
    }

    /// Embeds scalar inputs, clamping them to `[-x_max, x_max]`.
    pub fn embed_scalars(&self, xs: &[f64]) -> Result<DenseMatrix> {
        ensure!(!xs.is_empty(), "need at least one input");
        let k = self.rank();
        let mut t = DenseMatrix::zeros(k, xs.len());
        for (col, &x) in xs.iter().enumerate() {
            let z = (x / self.x_max).clamp(-1.0, 1.0);
            for j in 0..k {
                t[(j, col)] = chebyshev_unchecked(j + 1, z);
            }
        }
        Ok(self.directions.matmul(&t))
    }
}

/// Samples `k` orthonormal directions in `R^d`.
pub fn make_chebyshev_embedding(k: usize, d: usize, x_max: f64, rng: &mut Rng) -> Result<ChebyshevEmbedding> {
    ensure!(k >= 1 && k <= d, "need 1 <= k <= d, got k = {k}, d = {d}");
    ensure!(x_max > 0.0, "x_max must be positive");
    Ok(ChebyshevEmbedding { x_max, directions: random_orthonormal_columns(d, k, rng) })
}
