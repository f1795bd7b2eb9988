//! Spectral utilities built on the SVD: ε-rank, truncation, prescribed
//! spectra, angles between columns and row-space distances.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm2, DenseMatrix};
use super::qr::householder_qr;
use super::svd::{singular_values, svd};
use crate::error::{ensure, Error, Result};
use crate::rng::Rng;

/// Descending, strictly positive list of prescribed singular values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SpectrumSpec {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for SpectrumSpec {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<SpectrumSpec> for Vec<f64> {
    fn from(s: SpectrumSpec) -> Self {
        s.values
    }
}

impl SpectrumSpec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure!(!values.is_empty(), "spectrum must be non-empty");
        ensure!(values.iter().all(|&v| v.is_finite() && v > 0.0), "spectrum values must be finite and positive");
        ensure!(values.windows(2).all(|w| w[0] >= w[1]), "spectrum must be descending");
        Ok(Self { values })
    }

    /// `count` values from `e^hi` down to `e^lo`, uniform in the exponent.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Self> {
        ensure!(count >= 1 && lo <= hi, "log_spaced needs count >= 1 and lo <= hi");
        if count == 1 {
            return Self::new(vec![hi.exp()]);
        }
        let step = (hi - lo) / (count - 1) as f64;
        Self::new((0..count).map(|j| (hi - step * j as f64).exp()).collect())
    }

    /// `first · ratio^(j-1)` for `j = 1..=count`.
    pub fn geometric(first: f64, ratio: f64, count: usize) -> Result<Self> {
        ensure!(ratio > 0.0 && ratio <= 1.0, "geometric ratio must lie in (0, 1]");
        Self::new((0..count).map(|j| first * ratio.powi(j as i32)).collect())
    }

    /// `e^{-rate (j-1)}` for `j = 1..=count`.
    pub fn exponential(rate: f64, count: usize) -> Result<Self> {
        ensure!(rate >= 0.0, "decay rate must be nonnegative");
        Self::new((0..count).map(|j| (-rate * j as f64).exp()).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One-based access, `σ_j` for `1 <= j <= len`; zero beyond the end.
    pub fn sigma(&self, j: usize) -> f64 {
        assert!(j >= 1, "singular values are indexed from 1");
        self.values.get(j - 1).copied().unwrap_or(0.0)
    }
}

/// Number of singular values with `σ_j / σ_1 > eps` given a descending list.
/// An all-zero list has rank 0.
pub fn eps_rank_of_values(values: &[f64], eps: f64) -> usize {
    match values.first() {
        Some(&s1) if s1 > 0.0 => values.iter().filter(|&&s| s / s1 > eps).count(),
        _ => 0,
    }
}

/// ε-rank: `|{j : σ_j/σ_1 > eps}|`; the zero matrix has ε-rank 0.
pub fn eps_rank(a: &DenseMatrix, eps: f64) -> Result<usize> {
    ensure!(eps > 0.0, "eps must be positive, got {eps}");
    Ok(eps_rank_of_values(&singular_values(a)?, eps))
}

/// Best rank-`r` approximation.
pub fn truncate_to_rank(a: &DenseMatrix, r: usize) -> Result<DenseMatrix> {
    let max = a.rows().min(a.cols());
    ensure!(r <= max, "rank {r} exceeds min dimension {max}");
    Ok(svd(a)?.rank_r_reconstruction(r))
}

/// Truncation keeping the `eps_rank(a, eps)` leading triplets.
pub fn truncate_to_tolerance(a: &DenseMatrix, eps: f64) -> Result<(DenseMatrix, usize)> {
    ensure!(eps > 0.0, "eps must be positive, got {eps}");
    let s = svd(a)?;
    let kept = eps_rank_of_values(&s.singular_values, eps);
    Ok((s.rank_r_reconstruction(kept), kept))
}

/// Haar-distributed `d x d` orthogonal matrix: QR of a Gaussian matrix with
/// `diag(R) > 0`.
pub fn random_orthogonal(d: usize, rng: &mut Rng) -> DenseMatrix {
    random_orthonormal_columns(d, d, rng)
}

/// `n x k` matrix with orthonormal columns, uniform on the Stiefel manifold.
pub fn random_orthonormal_columns(n: usize, k: usize, rng: &mut Rng) -> DenseMatrix {
    assert!(k >= 1 && k <= n, "need 1 <= k <= n");
    let g = rng.gaussian_matrix(n, k, 1.0);
    householder_qr(&g, true).q
}

/// `d x L` matrix `U diag(s) Vᵀ` with Haar `U` and orthonormal `V`.
pub fn matrix_with_spectrum(d: usize, l: usize, spec: &SpectrumSpec, rng: &mut Rng) -> Result<DenseMatrix> {
    ensure!(spec.len() == d, "spectrum length {} differs from d = {d}", spec.len());
    ensure!(d <= l, "need d <= L, got d = {d}, L = {l}");
    let u = random_orthogonal(d, rng);
    let v = random_orthonormal_columns(l, d, rng);
    let us = DenseMatrix::from_fn(d, d, |i, j| u[(i, j)] * spec.values[j]);
    Ok(us.matmul_tr(&v))
}

/// Pairwise angles `arccos(|cos|)` between columns, in `[0, π/2]`.
pub fn angle_matrix(x: &DenseMatrix) -> Result<DenseMatrix> {
    let norms = x.column_norms();
    if let Some(j) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroColumn(j));
    }
    let gram = x.tr_matmul(x);
    let n = x.cols();
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let c = (gram[(i, j)].abs() / (norms[i] * norms[j])).clamp(0.0, 1.0);
            let a = c.acos();
            out[(i, j)] = a;
            out[(j, i)] = a;
        }
    }
    Ok(out)
}

/// Orthonormal basis for the range of `a`, dropping directions with
/// `σ <= max(m, n) · eps · σ_1`. Returns `None` for a numerically zero range.
pub fn orth(a: &DenseMatrix) -> Result<Option<DenseMatrix>> {
    let s = svd(a)?;
    let s1 = s.singular_values[0];
    let tol = a.rows().max(a.cols()) as f64 * f64::EPSILON * s1;
    let r = s.singular_values.iter().filter(|&&v| v > tol).count();
    Ok((r > 0).then(|| s.left_vectors.col_block(0, r)))
}

/// `‖P Xᵀ − Xᵀ‖₂` where `P` projects onto the row space of the sketch `S`.
///
/// An all-zero sketch spans nothing, so the result is `‖X‖₂`.
pub fn rowspace_distance(x: &DenseMatrix, s: &DenseMatrix) -> Result<f64> {
    if x.cols() != s.cols() {
        return Err(Error::DimensionMismatch(format!("sketch has {} columns, input has {}", s.cols(), x.cols())));
    }
    let xt = x.transpose();
    let Some(q) = orth(&s.transpose())? else {
        return spectral_norm(x);
    };
    let residual = q.matmul(&q.tr_matmul(&xt)).sub(&xt);
    spectral_norm(&residual)
}

/// Largest singular value, exact via SVD.
pub fn spectral_norm(a: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(a)?[0])
}

/// Largest singular value by power iteration on `AᵀA` with relative
/// tolerance `1e-10`; falls back to the SVD if iteration stalls.
pub fn power_spectral_norm(a: &DenseMatrix) -> Result<f64> {
    const TOL: f64 = 1e-10;
    const MAX_ITERS: usize = 500;
    let n = a.cols();
    // Deterministic start with no special alignment to coordinate axes.
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract()).collect();
    let nx = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut prev = 0.0;
    for _ in 0..MAX_ITERS {
        let y = a.matvec(&x);
        let z = a.tr_matvec(&y);
        let nz = norm2(&z);
        if nz == 0.0 {
            return Ok(0.0);
        }
        let lambda = dot(&x, &z);
        x = z.into_iter().map(|v| v / nz).collect();
        if (lambda - prev).abs() <= TOL * lambda {
            return Ok(lambda.sqrt());
        }
        prev = lambda;
    }
    spectral_norm(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn eps_rank_examples() {
        let a = DenseMatrix::from_diag(3, 3, &[1.0, 0.1, 0.01]);
        assert_eq!(eps_rank(&a, 0.05).unwrap(), 2);
        assert_eq!(eps_rank(&DenseMatrix::identity(4), 0.5).unwrap(), 4);
        assert_eq!(eps_rank(&DenseMatrix::zeros(5, 5), 0.1).unwrap(), 0);
        assert!(eps_rank(&a, 0.0).is_err());
        // strict inequality
        assert_eq!(eps_rank_of_values(&[1.0, 0.5], 0.5), 1);
    }

    #[test]
    fn truncation_examples() {
        let a = DenseMatrix::from_diag(3, 3, &[3.0, 2.0, 1.0]);
        let t = truncate_to_rank(&a, 1).unwrap();
        assert!(t.sub(&DenseMatrix::from_diag(3, 3, &[3.0])).max_abs() < 1e-14);
        assert!((spectral_norm(&a.sub(&t)).unwrap() - 2.0).abs() < 1e-12);
        assert!(truncate_to_rank(&a, 4).is_err());

        let b = DenseMatrix::from_diag(3, 3, &[1.0, 0.1, 0.01]);
        let (t, kept) = truncate_to_tolerance(&b, 0.05).unwrap();
        assert_eq!(kept, 2);
        assert!((spectral_norm(&b.sub(&t)).unwrap() - 0.01).abs() < 1e-14);
        let (t, kept) = truncate_to_tolerance(&b, 1.0).unwrap();
        assert_eq!(kept, 0);
        assert_eq!(t.max_abs(), 0.0);
    }

    #[test]
    fn rank_two_truncation_is_exact() {
        let mut rng = Rng::new(5);
        let a = rng.gaussian_matrix(6, 2, 1.0).matmul(&rng.gaussian_matrix(2, 9, 1.0));
        let t = truncate_to_rank(&a, 2).unwrap();
        assert!(spectral_norm(&a.sub(&t)).unwrap() <= 1e-10 * spectral_norm(&a).unwrap());
    }

    #[test]
    fn orthogonal_sampling() {
        let mut rng = Rng::new(1);
        let q1 = random_orthogonal(1, &mut rng);
        assert!((q1[(0, 0)].abs() - 1.0).abs() < 1e-15);
        let q = random_orthogonal(8, &mut rng);
        assert!(q.tr_matmul(&q).sub(&DenseMatrix::identity(8)).max_abs() <= 1e-10);
        let r = householder_qr(&q, true).r;
        let det: f64 = (0..8).map(|i| r[(i, i)]).product();
        assert!((det.abs() - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn prescribed_spectrum_round_trips() {
        let mut rng = Rng::new(2);
        let row = matrix_with_spectrum(1, 4, &SpectrumSpec::new(vec![1.0]).unwrap(), &mut rng).unwrap();
        assert!((row.frobenius_norm() - 1.0).abs() < 1e-14);
        let spec = SpectrumSpec::new(vec![2.0, 1.0]).unwrap();
        let a = matrix_with_spectrum(2, 5, &spec, &mut rng).unwrap();
        let s = singular_values(&a).unwrap();
        assert!((s[0] - 2.0).abs() <= 2e-9 && (s[1] - 1.0).abs() <= 1e-9);
        assert!(matrix_with_spectrum(3, 2, &SpectrumSpec::new(vec![1.0; 3]).unwrap(), &mut rng).is_err());
    }

    #[test]
    fn angle_examples() {
        let dup = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap();
        assert!(angle_matrix(&dup).unwrap()[(0, 1)].abs() < 1e-7);
        let orth = DenseMatrix::identity(2);
        assert!((angle_matrix(&orth).unwrap()[(0, 1)] - FRAC_PI_2).abs() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let x = DenseMatrix::from_rows(&[vec![1.0, h], vec![0.0, h]]).unwrap();
        assert!((angle_matrix(&x).unwrap()[(0, 1)] - FRAC_PI_4).abs() < 1e-12);
        let z = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(angle_matrix(&z), Err(Error::ZeroColumn(1))));
    }

    #[test]
    fn rowspace_examples() {
        let mut rng = Rng::new(4);
        let x = rng.gaussian_matrix(5, 9, 1.0);
        assert!(rowspace_distance(&x, &x).unwrap() <= 1e-9);

        let r2 = rng.gaussian_matrix(5, 2, 1.0).matmul(&rng.gaussian_matrix(2, 9, 1.0));
        assert!(rowspace_distance(&r2, &r2.row_block(0, 2)).unwrap() <= 1e-9);

        let zero = DenseMatrix::zeros(2, 9);
        let d = rowspace_distance(&x, &zero).unwrap();
        assert!((d - spectral_norm(&x).unwrap()).abs() < 1e-12);
        assert!(rowspace_distance(&x, &DenseMatrix::zeros(2, 8)).is_err());
    }

    #[test]
    fn power_iteration_agrees_with_svd() {
        let a = Rng::new(8).gaussian_matrix(12, 7, 1.0);
        let p = power_spectral_norm(&a).unwrap();
        let s = spectral_norm(&a).unwrap();
        assert!((p - s).abs() <= 1e-8 * s);
    }
}
