use super::AttentionWeights;
use crate::error::{ensure, Result};
use crate::linalg::{random_orthogonal, random_orthonormal_columns, truncate_to_rank, DenseMatrix, SpectrumSpec};
use crate::rng::Rng;

/// Input `U = [diag(σ) | 0]` and single-head weights on which no rank-`d̃`
/// value matrix can keep the output error below `σ_{d̃+1}/4`.
///
/// `W_Q = W_K = √c·I` with `c = log(4d)·σ_d⁻²·√d`, so the scores saturate
/// on the diagonal; `W_V` is a Haar orthogonal matrix.
pub fn adversarial_incompressible(
    spec: &SpectrumSpec,
    l: usize,
    rng: &mut Rng,
) -> Result<(DenseMatrix, AttentionWeights)> {
    let d = spec.len();
    ensure!(l >= d, "need L >= d, got L = {l}, d = {d}");
    let u = DenseMatrix::from_diag(d, l, spec.values());
    let sd = spec.sigma(d);
    let c = (4.0 * d as f64).ln() / (sd * sd) * (d as f64).sqrt();
    let qk = DenseMatrix::identity(d).scale(c.sqrt());
    let w = AttentionWeights::new(qk.clone(), qk, random_orthogonal(d, rng), 1)?;
    Ok((u, w))
}

/// The same weights with `W_V` swapped for `wv`.
pub fn value_replaced(w: &AttentionWeights, wv: DenseMatrix) -> Result<AttentionWeights> {
    AttentionWeights::new(w.wq().clone(), w.wk().clone(), wv, w.heads())
}

/// Best Frobenius rank-`d̃` approximation of `W_V`.
pub fn best_rank_value_candidate(w: &AttentionWeights, d_tilde: usize) -> Result<DenseMatrix> {
    truncate_to_rank(w.wv(), d_tilde)
}

/// Random rank-`d̃` value matrices. Even draws perturb `W_V` restricted to
/// the leading `d̃` coordinates and re-truncate; odd draws project `W_V`
/// onto a random `d̃`-dimensional subspace.
pub fn random_value_candidates(
    w: &AttentionWeights,
    d_tilde: usize,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<DenseMatrix>> {
    let d = w.dim();
    ensure!(d_tilde >= 1 && d_tilde < d, "need 1 <= d_tilde < d");
    let lead = DenseMatrix::from_fn(d, d, |i, j| if j < d_tilde { w.wv()[(i, j)] } else { 0.0 });
    (0..count)
        .map(|n| {
            if n % 2 == 0 {
                let s = rng.uniform(0.0, 0.5) / (d as f64).sqrt();
                truncate_to_rank(&lead.add_scaled(&rng.gaussian_matrix(d, d, 1.0), s), d_tilde)
            } else {
                let q = random_orthonormal_columns(d, d_tilde, rng);
                Ok(w.wv().matmul(&q).matmul_tr(&q))
            }
        })
        .collect()
}
