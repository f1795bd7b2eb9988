//! Head-dependent sparse sketching of attention weights and the instance on
//! which it beats any shared low-rank value matrix.

use super::{mh_attention, softmax_cols, AttentionWeights};
use crate::error::{ensure, Error, Result};
use crate::linalg::{norm2, spectral_norm, svd, DenseMatrix, SpectrumSpec};
use crate::rng::Rng;

/// `W = left · right` with `left` of size `d_h x (d̃+1)` and `right` of size
/// `(d̃+1) x d`.
#[derive(Clone, Debug)]
pub struct FactorPair {
    pub left: DenseMatrix,
    pub right: DenseMatrix,
}

impl FactorPair {
    pub fn product(&self) -> DenseMatrix {
        self.left.matmul(&self.right)
    }
}

#[derive(Clone, Debug)]
pub struct HeadFactors {
    pub q: FactorPair,
    pub k: FactorPair,
    pub v: FactorPair,
}

#[derive(Clone, Debug)]
pub struct SparseSketchFactors {
    pub heads: Vec<HeadFactors>,
}

impl SparseSketchFactors {
    /// Stacks the per-head products into full `d x d` weights.
    pub fn realized(&self) -> Result<AttentionWeights> {
        let stack = |f: &dyn Fn(&HeadFactors) -> &FactorPair| -> DenseMatrix {
            let blocks: Vec<DenseMatrix> = self.heads.iter().map(|h| f(h).product()).collect();
            DenseMatrix::vstack(&blocks.iter().collect::<Vec<_>>())
        };
        AttentionWeights::new(stack(&|h| &h.q), stack(&|h| &h.k), stack(&|h| &h.v), self.heads.len())
    }

    /// Every right-factor row except the last row of each key factor has at
    /// most `d_h` nonzeros.
    pub fn sparsity_holds(&self) -> bool {
        self.heads.iter().all(|hf| {
            let dh = hf.q.left.rows();
            let row_ok = |m: &DenseMatrix, skip_last: bool| {
                let n = if skip_last { m.rows() - 1 } else { m.rows() };
                (0..n).all(|r| m.row(r).iter().filter(|&&x| x != 0.0).count() <= dh)
            };
            row_ok(&hf.q.right, false) && row_ok(&hf.k.right, true) && row_ok(&hf.v.right, false)
        })
    }

    /// Per-head, per-role Frobenius norms of the products are at most those
    /// of the original slices, up to `rel_slack`.
    pub fn norms_within(&self, w: &AttentionWeights, rel_slack: f64) -> bool {
        self.heads.iter().enumerate().all(|(i, hf)| {
            let orig = w.head(i);
            [(&hf.q, &orig.q), (&hf.k, &orig.k), (&hf.v, &orig.v)]
                .iter()
                .all(|(f, o)| f.product().frobenius_norm() <= o.frobenius_norm() * (1.0 + rel_slack))
        })
    }
}

/// Interleaved-spectrum instance with its sparse head-dependent factors.
#[derive(Clone, Debug)]
pub struct SparseSketch {
    pub u: DenseMatrix,
    pub weights: AttentionWeights,
    pub factors: SparseSketchFactors,
    pub spectrum: SpectrumSpec,
    pub d_tilde: usize,
    /// Frobenius stability bound `C` of the shared-sketch statement.
    pub stability: f64,
    /// Saturation tolerance the softmax had to reach.
    pub epsilon: f64,
    /// Score scale found by doubling until the tolerance was met.
    pub alpha: f64,
}

const MAX_DOUBLINGS: usize = 80;

/// Builds `U = [U_D | 0]` with `U_D` block-diagonal over heads, head `i`
/// holding `σ_i, σ_{h+i}, σ_{2h+i}, …`, together with `W_V = I`,
/// `W_Q^{(i)} = W_K^{(i)} = αW̄` and the sparse factors.
pub fn sparse_sketch_instance(
    spec: &SpectrumSpec,
    heads: usize,
    d_tilde: usize,
    l: usize,
    stability: f64,
    rng: &mut Rng,
) -> Result<SparseSketch> {
    let d = spec.len();
    ensure!(heads >= 1 && d.is_multiple_of(heads), "d = {d} is not divisible by h = {heads}");
    let dh = d / heads;
    ensure!(d_tilde >= 1 && d_tilde < dh, "need 1 <= d_tilde < d_h, got d_tilde = {d_tilde}, d_h = {dh}");
    ensure!(l >= d, "need L >= d, got L = {l}, d = {d}");
    ensure!(stability >= 1.0, "stability bound must be at least 1");

    let s = spec.values();
    let diag: Vec<f64> = (0..d).map(|k| s[(k % dh) * heads + k / dh]).collect();
    let u = DenseMatrix::from_diag(d, l, &diag);
    let dirs = separated_unit_vectors(dh, d, rng);
    let wbar = DenseMatrix::from_fn(dh, d, |r, k| dirs[(r, k)] / diag[k]);

    let head_tail = (0..heads).map(|i| diag[i * dh + d_tilde]).fold(f64::INFINITY, f64::min);
    let epsilon = (spec.sigma(d_tilde + 1) / (2.0 * (1.0 + stability * (d as f64).sqrt())))
        .min(head_tail / (4.0 * s[0]))
        .min(1.0);

    let mut alpha = 1.0;
    for _ in 0..MAX_DOUBLINGS {
        let qk = DenseMatrix::vstack(&vec![&wbar; heads]).scale(alpha);
        let weights = AttentionWeights::new(qk.clone(), qk, DenseMatrix::identity(d), heads)?;
        let factors = build_factors(&dirs, &diag, heads, d_tilde, alpha);
        if saturated(&u, &weights, &factors, d_tilde, epsilon)? {
            return Ok(SparseSketch {
                u,
                weights,
                factors,
                spectrum: spec.clone(),
                d_tilde,
                stability,
                epsilon,
                alpha,
            });
        }
        alpha *= 2.0;
    }
    Err(Error::Precondition(format!("softmax did not saturate to {epsilon:e} within {MAX_DOUBLINGS} doublings")))
}

/// `count` unit vectors in `R^dim` with every pairwise `|cos|` below 0.999.
fn separated_unit_vectors(dim: usize, count: usize, rng: &mut Rng) -> DenseMatrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(count);
    while cols.len() < count {
        let mut v = rng.gaussian_vec(dim);
        let n = norm2(&v);
        v.iter_mut().for_each(|x| *x /= n);
        let ok = cols.iter().all(|c| c.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().abs() < 0.999);
        if ok || dim == 1 {
            cols.push(v);
        }
    }
    DenseMatrix::from_columns(&cols)
}

fn build_factors(dirs: &DenseMatrix, diag: &[f64], heads: usize, d_tilde: usize, alpha: f64) -> SparseSketchFactors {
    let d = diag.len();
    let dh = d / heads;
    let r = d_tilde + 1;
    let heads = (0..heads)
        .map(|i| {
            let start = i * dh;
            let j0 = start + d_tilde;
            let top = start..j0;

            let mut left = DenseMatrix::zeros(dh, r);
            for (c, k) in top.clone().enumerate() {
                for row in 0..dh {
                    left[(row, c)] = alpha * dirs[(row, k)] / diag[k];
                }
            }
            for row in 0..dh {
                left[(row, d_tilde)] = alpha * dirs[(row, j0)];
            }

            let mut select = DenseMatrix::zeros(r, d);
            for (c, k) in top.clone().enumerate() {
                select[(c, k)] = 1.0;
            }
            let mut q_right = select.clone();
            q_right[(d_tilde, j0)] = 1.0 / diag[j0];
            let mut k_right = select.clone();
            for k in (0..d).filter(|k| !top.contains(k)) {
                k_right[(d_tilde, k)] = 1.0 / diag[k];
            }

            let v_left = DenseMatrix::from_fn(dh, r, |row, c| if row == c && c < d_tilde { 1.0 } else { 0.0 });
            HeadFactors {
                q: FactorPair { left: left.clone(), right: q_right },
                k: FactorPair { left, right: k_right },
                v: FactorPair { left: v_left, right: select },
            }
        })
        .collect();
    SparseSketchFactors { heads }
}

/// Checks that the full scores are within `ε` of the saturated pattern and
/// that every head's sketched scores are within `ε` of theirs.
fn saturated(
    u: &DenseMatrix,
    w: &AttentionWeights,
    factors: &SparseSketchFactors,
    d_tilde: usize,
    epsilon: f64,
) -> Result<bool> {
    let (d, l) = u.shape();
    let dh = w.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let target = |owner: &dyn Fn(usize) -> usize| {
        DenseMatrix::from_fn(l, l, |row, col| {
            if col >= d {
                1.0 / l as f64
            } else if row == owner(col) {
                1.0
            } else {
                0.0
            }
        })
    };
    let h0 = w.head(0);
    let g = softmax_cols(&h0.q.matmul(u).tr_matmul(&h0.k.matmul(u)).scale(scale));
    if g.sub(&target(&|c| c)).frobenius_norm() > epsilon {
        return Ok(false);
    }
    for (i, hf) in factors.heads.iter().enumerate() {
        let (start, j0) = (i * dh, i * dh + d_tilde);
        let gs = softmax_cols(&hf.q.product().matmul(u).tr_matmul(&hf.k.product().matmul(u)).scale(scale));
        let owner = |c: usize| if (start..j0).contains(&c) { c } else { j0 };
        if gs.sub(&target(&owner)).frobenius_norm() > epsilon {
            return Ok(false);
        }
    }
    Ok(true)
}

impl SparseSketch {
    pub fn heads(&self) -> usize {
        self.weights.heads()
    }

    /// `‖MH(U; W) − MH(U; W̃)‖₂` with `W̃` the realized sparse factors.
    pub fn sparse_error(&self) -> Result<f64> {
        let full = mh_attention(&self.u, &self.weights)?;
        let sketched = mh_attention(&self.u, &self.factors.realized()?)?;
        spectral_norm(&full.sub(&sketched))
    }

    /// `4√h·σ_{hd̃+1}`.
    pub fn sparse_bound(&self) -> f64 {
        let h = self.heads();
        4.0 * (h as f64).sqrt() * self.spectrum.sigma(h * self.d_tilde + 1)
    }

    /// `σ_{d̃+1}/2`.
    pub fn shared_bound(&self) -> f64 {
        self.spectrum.sigma(self.d_tilde + 1) / 2.0
    }

    /// Spectral error of replacing `W_V` by `wv` with `W_Q`, `W_K` kept.
    pub fn value_error(&self, wv: &DenseMatrix) -> Result<f64> {
        let w = AttentionWeights::new(self.weights.wq().clone(), self.weights.wk().clone(), wv.clone(), self.heads())?;
        let full = mh_attention(&self.u, &self.weights)?;
        spectral_norm(&full.sub(&mh_attention(&self.u, &w)?))
    }
}

/// Errors of shared rank-`d̃` value matrices on the instance: the optimum
/// `P W_V` with `P` projecting onto the leading `d̃` left singular vectors of
/// the full output, then `random` perturbed candidates, each re-truncated to
/// rank `d̃` and rescaled into `‖W̃_V‖_F <= C‖W_V‖_F`.
pub fn shared_sketch_errors(inst: &SparseSketch, random: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let d = inst.weights.dim();
    let r = inst.d_tilde;
    let wv = inst.weights.wv();
    let limit = inst.stability * wv.frobenius_norm();
    let out = mh_attention(&inst.u, &inst.weights)?;
    let basis = svd(&out)?.left_vectors.col_block(0, r);
    let optimum = basis.matmul(&basis.tr_matmul(wv));

    let mut candidates = vec![optimum.clone()];
    for _ in 0..random {
        let s = rng.uniform(0.0, 0.5) / (d as f64).sqrt();
        let noisy = optimum.add_scaled(&rng.gaussian_matrix(d, d, 1.0), s);
        candidates.push(svd(&noisy)?.rank_r_reconstruction(r));
    }
    candidates
        .into_iter()
        .map(|c| {
            let n = c.frobenius_norm();
            let c = if n > limit { c.scale(limit / n) } else { c };
            inst.value_error(&c)
        })
        .collect()
}

/// `W_{2,h} X` where `W_{2,h}` stacks `h` blocks of `d̃ x d`, every row
/// holding exactly `d_h = d/h` Gaussian entries at random positions.
pub fn headwise_sparse_sketch(x: &DenseMatrix, heads: usize, d_tilde: usize, rng: &mut Rng) -> Result<DenseMatrix> {
    let d = x.rows();
    ensure!(heads >= 1 && d.is_multiple_of(heads), "d = {d} is not divisible by h = {heads}");
    ensure!(d_tilde >= 1, "d_tilde must be positive");
    let dh = d / heads;
    let rows = heads * d_tilde;
    let mut w = DenseMatrix::zeros(rows, d);
    for r in 0..rows {
        for c in rng.distinct_indices(d, dh) {
            w[(r, c)] = rng.normal();
        }
    }
    Ok(w.matmul(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{matrix_with_spectrum, rowspace_distance, singular_values};

    #[test]
    fn interleaved_spectrum_and_factors() {
        let spec = SpectrumSpec::geometric(1.0, 0.5, 32).unwrap();
        let inst = sparse_sketch_instance(&spec, 4, 2, 40, 1.0, &mut Rng::new(1)).unwrap();
        let s = singular_values(&inst.u).unwrap();
        for (a, b) in s.iter().zip(spec.values()) {
            assert!((a - b).abs() <= 1e-15 * b.max(1.0));
        }
        assert!(inst.factors.sparsity_holds());
        assert!(inst.factors.norms_within(&inst.weights, 1e-12));
        for hf in &inst.factors.heads {
            assert_eq!(hf.q.left.shape(), (8, 3));
            assert_eq!(hf.k.right.shape(), (3, 32));
        }
    }

    #[test]
    fn sparse_beats_shared() {
        let spec = SpectrumSpec::geometric(1.0, 0.5, 32).unwrap();
        let mut rng = Rng::new(2);
        let inst = sparse_sketch_instance(&spec, 4, 2, 40, 1.0, &mut rng).unwrap();
        let sparse = inst.sparse_error().unwrap();
        assert!(sparse <= inst.sparse_bound(), "{sparse} > {}", inst.sparse_bound());
        let shared = shared_sketch_errors(&inst, 5, &mut rng).unwrap();
        assert!(shared.iter().all(|&e| e >= inst.shared_bound()));
    }

    #[test]
    fn single_head_degenerates() {
        let spec = SpectrumSpec::geometric(1.0, 0.6, 8).unwrap();
        let inst = sparse_sketch_instance(&spec, 1, 3, 10, 1.0, &mut Rng::new(3)).unwrap();
        assert!(inst.sparse_error().unwrap() <= 4.0 * spec.sigma(4));
    }

    #[test]
    fn rejects_large_d_tilde() {
        let spec = SpectrumSpec::geometric(1.0, 0.5, 8).unwrap();
        assert!(sparse_sketch_instance(&spec, 2, 4, 8, 1.0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn full_dense_sketch_recovers_rowspace() {
        let mut rng = Rng::new(4);
        let x = matrix_with_spectrum(10, 20, &SpectrumSpec::exponential(0.2, 10).unwrap(), &mut rng).unwrap();
        let s = headwise_sparse_sketch(&x, 1, 10, &mut rng).unwrap();
        assert!(rowspace_distance(&x, &s).unwrap() <= 1e-9);
    }

    #[test]
    fn sketch_nonzero_budget() {
        let mut rng = Rng::new(5);
        let x = DenseMatrix::identity(16);
        for h in [1, 2, 4, 8] {
            let s = headwise_sparse_sketch(&x, h, 2, &mut rng).unwrap();
            assert_eq!(s.rows(), 2 * h);
            assert_eq!(s.count_nonzeros(), 2 * 16);
        }
    }
}
