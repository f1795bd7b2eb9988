//! One-sided Jacobi SVD with QR preconditioning.
//!
//! The input (transposed if wide) is column-sorted by norm and reduced to
//! `R` by Householder QR; Hestenes rotations then orthogonalize the columns
//! of `R`. Rotation `(p, q)` is applied only while
//! `|w_pᵀw_q| > TOL · ‖w_p‖‖w_q‖`, so the stopping rule is relative to the
//! columns involved and small singular values keep their relative accuracy.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm2, DenseMatrix};
use super::qr::householder_qr;
use crate::error::{Error, Result};

const TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 60;

/// Thin SVD `A = U diag(σ) Vᵀ` with `r = min(rows, cols)` triplets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SvdResult {
    pub left_vectors: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub right_vectors: DenseMatrix,
}

impl SvdResult {
    pub fn rank_r_reconstruction(&self, r: usize) -> DenseMatrix {
        let (m, n) = (self.left_vectors.rows(), self.right_vectors.rows());
        if r == 0 {
            return DenseMatrix::zeros(m, n);
        }
        let u = self.left_vectors.col_block(0, r);
        let v = self.right_vectors.col_block(0, r);
        let us = DenseMatrix::from_fn(m, r, |i, j| u[(i, j)] * self.singular_values[j]);
        us.matmul_tr(&v)
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.rank_r_reconstruction(self.singular_values.len())
    }
}

/// Full thin SVD.
pub fn svd(a: &DenseMatrix) -> Result<SvdResult> {
    if !a.is_finite() {
        let pos = a.as_slice().iter().position(|x| !x.is_finite()).unwrap_or(0);
        return Err(Error::NonFinite { row: pos / a.cols(), col: pos % a.cols() });
    }
    if a.rows() >= a.cols() {
        tall_svd(a, true).map(|(u, s, v)| SvdResult {
            left_vectors: u.expect("vectors requested"),
            singular_values: s,
            right_vectors: v.expect("vectors requested"),
        })
    } else {
        tall_svd(&a.transpose(), true).map(|(u, s, v)| SvdResult {
            left_vectors: v.expect("vectors requested"),
            singular_values: s,
            right_vectors: u.expect("vectors requested"),
        })
    }
}

/// Singular values only, descending.
pub fn singular_values(a: &DenseMatrix) -> Result<Vec<f64>> {
    if !a.is_finite() {
        let pos = a.as_slice().iter().position(|x| !x.is_finite()).unwrap_or(0);
        return Err(Error::NonFinite { row: pos / a.cols(), col: pos % a.cols() });
    }
    let t;
    let tall = if a.rows() >= a.cols() {
        a
    } else {
        t = a.transpose();
        &t
    };
    tall_svd(tall, false).map(|(_, s, _)| s)
}

type TallSvd = (Option<DenseMatrix>, Vec<f64>, Option<DenseMatrix>);

fn tall_svd(a: &DenseMatrix, vectors: bool) -> Result<TallSvd> {
    let (m, n) = a.shape();

    // Column pivoting by norm before QR speeds up the Jacobi sweeps.
    let norms = a.column_norms();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let ap = a.select_columns(&perm);
    let qr = householder_qr(&ap, false);

    // Column-major copy of R for the rotations.
    let mut w: Vec<f64> = (0..n).flat_map(|j| (0..n).map(move |i| (i, j))).map(|(i, j)| qr.r[(i, j)]).collect();
    let mut v: Vec<f64> = if vectors {
        let mut v = vec![0.0; n * n];
        (0..n).for_each(|j| v[j * n + j] = 1.0);
        v
    } else {
        Vec::new()
    };

    // Columns below this norm are roundoff; rotating them against large
    // columns only reinjects error of the same size, so they count as converged.
    let negligible = (m.max(n) as f64) * f64::EPSILON * norm2(&w);
    let mut sweeps = 0;
    loop {
        let mut rotated = false;
        let mut worst = 0.0f64;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (cp, cq) = pair_mut(&mut w, n, p, q);
                let alpha = dot(cp, cp);
                let beta = dot(cq, cq);
                if alpha.sqrt() <= negligible || beta.sqrt() <= negligible {
                    continue;
                }
                let gamma = dot(cp, cq);
                let ratio = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                worst = worst.max(ratio);
                if ratio <= TOL {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(cp, cq, c, s);
                if vectors {
                    let (vp, vq) = pair_mut(&mut v, n, p, q);
                    rotate(vp, vq, c, s);
                }
            }
        }
        sweeps += 1;
        if !rotated {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps, residual: worst });
        }
    }

    for col in w.chunks_mut(n) {
        if norm2(col) <= negligible {
            col.fill(0.0);
        }
    }
    let sig: Vec<f64> = (0..n).map(|j| norm2(&w[j * n..(j + 1) * n])).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| sig[y].total_cmp(&sig[x]));
    let values: Vec<f64> = order.iter().map(|&j| sig[j]).collect();
    if !vectors {
        return Ok((None, values, None));
    }

    // Left factor of R: normalized columns, completed where σ is negligible.
    let floor = values[0] * (m.max(n) as f64) * f64::EPSILON;
    let mut ur: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let col = &w[j * n..(j + 1) * n];
        if sig[j] > floor && sig[j] > 0.0 {
            ur.push(col.iter().map(|x| x / sig[j]).collect());
        } else {
            ur.push(vec![0.0; n]);
            missing.push(slot);
        }
    }
    complete_basis(&mut ur, &missing);

    let ur_mat = DenseMatrix::from_columns(&ur);
    let left = qr.q.matmul(&ur_mat);
    // Right vectors: rotations act on permuted columns, so undo the pivoting.
    let mut right = DenseMatrix::zeros(n, n);
    for (slot, &j) in order.iter().enumerate() {
        for (k, &orig) in perm.iter().enumerate() {
            right[(orig, slot)] = v[j * n + k];
        }
    }
    Ok((Some(left), values, Some(right)))
}

fn pair_mut(buf: &mut [f64], n: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (head, tail) = buf.split_at_mut(q * n);
    (&mut head[p * n..(p + 1) * n], &mut tail[..n])
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fills the listed slots with unit vectors orthogonal to every other column.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let n = cols[0].len();
    let mut filled: Vec<bool> = vec![true; cols.len()];
    missing.iter().for_each(|&s| filled[s] = false);
    let mut candidate = 0;
    for &slot in missing {
        loop {
            assert!(candidate < n, "basis completion ran out of candidates");
            let mut x = vec![0.0; n];
            x[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if filled[k] {
                        let s = dot(c, &x);
                        x.iter_mut().zip(c).for_each(|(xi, ci)| *xi -= s * ci);
                    }
                }
            }
            let nx = norm2(&x);
            if nx > 0.5 {
                cols[slot] = x.into_iter().map(|v| v / nx).collect();
                filled[slot] = true;
                break;
            }
        }
    }
}
