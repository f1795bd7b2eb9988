use super::{mh_attention, AttentionWeights};
use crate::error::{ensure, Error, Result};
use crate::linalg::{singular_values, spectral_norm, svd, DenseMatrix};

/// Attention weights with every matrix projected onto the leading left
/// singular subspace of a vocabulary `Ξ`: `W̃ = W U_d̃ U_d̃ᵀ`.
#[derive(Clone, Debug)]
pub struct CompressedAttention {
    pub projector_basis: DenseMatrix,
    pub base: AttentionWeights,
    pub compressed: AttentionWeights,
}

/// Norms before and after compression.
#[derive(Clone, Copy, Debug)]
pub struct StabilityCheck {
    pub qk_original: f64,
    pub qk_compressed: f64,
    pub v_original: f64,
    pub v_compressed: f64,
}

impl StabilityCheck {
    /// Both compressed norms are at most the originals, up to `rel_slack`
    /// relative to the original.
    pub fn holds(&self, rel_slack: f64) -> bool {
        self.qk_compressed <= self.qk_original * (1.0 + rel_slack)
            && self.v_compressed <= self.v_original * (1.0 + rel_slack)
    }
}

pub fn compress_on_vocabulary(w: &AttentionWeights, xi: &DenseMatrix, d_tilde: usize) -> Result<CompressedAttention> {
    let d = w.dim();
    if xi.rows() != d {
        return Err(Error::DimensionMismatch(format!("vocabulary has {} rows, weights expect {d}", xi.rows())));
    }
    ensure!(d_tilde >= 1 && d_tilde < d, "need 1 <= d_tilde < d, got d_tilde = {d_tilde}, d = {d}");
    ensure!(d_tilde <= xi.cols(), "d_tilde = {d_tilde} exceeds the vocabulary size {}", xi.cols());
    let basis = svd(xi)?.left_vectors.col_block(0, d_tilde);
    let proj = basis.matmul_tr(&basis);
    let compressed =
        AttentionWeights::new(w.wq().matmul(&proj), w.wk().matmul(&proj), w.wv().matmul(&proj), w.heads())?;
    Ok(CompressedAttention { projector_basis: basis, base: w.clone(), compressed })
}

impl CompressedAttention {
    pub fn d_tilde(&self) -> usize {
        self.projector_basis.cols()
    }

    /// `‖MH(U; W) − MH(U; W̃)‖_F`.
    pub fn output_error(&self, u: &DenseMatrix) -> Result<f64> {
        Ok(mh_attention(u, &self.base)?.sub(&mh_attention(u, &self.compressed)?).frobenius_norm())
    }

    pub fn stability(&self) -> Result<StabilityCheck> {
        let (b, c) = (&self.base, &self.compressed);
        Ok(StabilityCheck {
            qk_original: spectral_norm(&b.wq().tr_matmul(b.wk()))?,
            qk_compressed: spectral_norm(&c.wq().tr_matmul(c.wk()))?,
            v_original: spectral_norm(b.wv())?,
            v_compressed: spectral_norm(c.wv())?,
        })
    }

    /// Numerical ranks of `W̃_Q`, `W̃_K`, `W̃_V`. The tolerance follows the
    /// uncompressed matrix, whose scale sets the roundoff of the projection.
    pub fn realized_ranks(&self) -> Result<[usize; 3]> {
        let (b, c) = (&self.base, &self.compressed);
        let rank = |orig: &DenseMatrix, m: &DenseMatrix| -> Result<usize> {
            let tol = 4.0 * m.rows().max(m.cols()) as f64 * f64::EPSILON * spectral_norm(orig)?;
            Ok(singular_values(m)?.iter().filter(|&&v| v > tol).count())
        };
        Ok([rank(b.wq(), c.wq())?, rank(b.wk(), c.wk())?, rank(b.wv(), c.wv())?])
    }
}
