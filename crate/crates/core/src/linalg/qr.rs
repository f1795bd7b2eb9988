//! Householder QR for tall matrices.

use super::matrix::{dot, norm2, DenseMatrix};

/// Thin QR factors `A = Q R` with `Q` (m x n) orthonormal and `R` (n x n)
/// upper triangular.
#[derive(Clone, Debug)]
pub struct QrFactors {
    pub q: DenseMatrix,
    pub r: DenseMatrix,
}

/// Column-major working copy; Householder updates touch whole columns.
struct ColMajor {
    m: usize,
    data: Vec<f64>,
}

impl ColMajor {
    fn from(a: &DenseMatrix) -> Self {
        let (m, n) = a.shape();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for (j, &v) in a.row(i).iter().enumerate() {
                data[j * m + i] = v;
            }
        }
        Self { m, data }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.m..(j + 1) * self.m]
    }

    fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.m..(j + 1) * self.m]
    }
}

/// Thin Householder QR of an `m x n` matrix with `m >= n`.
///
/// When `positive_diag` is set the signs are fixed so that `diag(R) >= 0`,
/// which makes the factorization unique for full-rank input.
pub fn householder_qr(a: &DenseMatrix, positive_diag: bool) -> QrFactors {
    let (m, n) = a.shape();
    assert!(m >= n, "householder_qr expects a tall matrix, got {m}x{n}");
    let mut w = ColMajor::from(a);
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut r = DenseMatrix::zeros(n, n);

    for k in 0..n {
        let x = &w.col(k)[k..];
        let alpha = norm2(x);
        let mut v = x.to_vec();
        if alpha == 0.0 {
            reflectors.push(Vec::new());
        } else {
            let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
            v[0] += sign * alpha;
            let vn = norm2(&v);
            v.iter_mut().for_each(|x| *x /= vn);
            for j in k..n {
                let col = &mut w.col_mut(j)[k..];
                let s = 2.0 * dot(&v, col);
                col.iter_mut().zip(&v).for_each(|(c, vi)| *c -= s * vi);
            }
            reflectors.push(v);
        }
        for j in k..n {
            r[(k, j)] = w.col(j)[k];
        }
    }

    // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I.
    let mut q = ColMajor { m, data: vec![0.0; m * n] };
    for j in 0..n {
        q.col_mut(j)[j] = 1.0;
    }
    for k in (0..n).rev() {
        let v = &reflectors[k];
        if v.is_empty() {
            continue;
        }
        for j in k..n {
            let col = &mut q.col_mut(j)[k..];
            let s = 2.0 * dot(v, col);
            col.iter_mut().zip(v).for_each(|(c, vi)| *c -= s * vi);
        }
    }

    let mut qm = DenseMatrix::from_fn(m, n, |i, j| q.data[j * m + i]);
    if positive_diag {
        for k in 0..n {
            if r[(k, k)] < 0.0 {
                for j in k..n {
                    r[(k, j)] = -r[(k, j)];
                }
                for i in 0..m {
                    qm[(i, k)] = -qm[(i, k)];
                }
            }
        }
    }
    QrFactors { q: qm, r }
}
