use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Dense real matrix stored row-major.
///
/// Public constructors reject zero dimensions and non-finite entries.
/// Arithmetic helpers panic on shape mismatch, like slice indexing does;
/// the higher-level operations validate shapes and return errors first.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for DenseMatrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        DenseMatrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl From<DenseMatrix> for RawMatrix {
    fn from(m: DenseMatrix) -> Self {
        RawMatrix { rows: m.rows, cols: m.cols, data: m.data }
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row = &self.row(i)[..self.cols.min(8)];
            writeln!(f, "  {row:?}{}", if self.cols > 8 { " ..." } else { "" })?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, validating shape and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(rows > 0 && cols > 0, "matrix dimensions must be positive, got {rows}x{cols}");
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { row: pos / cols, col: pos % cols });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        ensure!(!rows.is_empty(), "matrix needs at least one row");
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// `rows x cols` matrix with `diag` on the main diagonal.
    pub fn from_diag(rows: usize, cols: usize, diag: &[f64]) -> Self {
        assert!(diag.len() <= rows.min(cols), "diagonal longer than matrix");
        let mut m = Self::zeros(rows, cols);
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        assert!(!columns.is_empty(), "need at least one column");
        let rows = columns[0].len();
        assert!(columns.iter().all(|c| c.len() == rows), "ragged columns");
        Self::from_fn(rows, columns.len(), |i, j| columns[j][i])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self.data[i * self.cols + j] = v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self { rows: self.cols, cols: self.rows, data: out }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Self {
        gemm(self, false, other, false)
    }

    /// `selfᵀ * other`.
    pub fn tr_matmul(&self, other: &Self) -> Self {
        gemm(self, true, other, false)
    }

    /// `self * otherᵀ`.
    pub fn matmul_tr(&self, other: &Self) -> Self {
        gemm(self, false, other, true)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ * x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|x| s * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Self, s: f64) -> Self {
        self.zip_with(other, |a, b| a + s * b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape(), other.shape(), "elementwise shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_block(&self, start: usize, end: usize) -> Self {
        assert!(start < end && end <= self.rows, "row block out of range");
        Self { rows: end - start, cols: self.cols, data: self.data[start * self.cols..end * self.cols].to_vec() }
    }

    /// Columns `start..end` as a new matrix.
    pub fn col_block(&self, start: usize, end: usize) -> Self {
        assert!(start < end && end <= self.cols, "column block out of range");
        Self::from_fn(self.rows, end - start, |i, j| self[(i, start + j)])
    }

    /// Columns picked by index, with repetition allowed.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |i, j| self[(i, idx[j])])
    }

    pub fn vstack(blocks: &[&Self]) -> Self {
        assert!(!blocks.is_empty());
        let cols = blocks[0].cols;
        assert!(blocks.iter().all(|b| b.cols == cols), "vstack column mismatch");
        let data: Vec<f64> = blocks.iter().flat_map(|b| b.data.iter().copied()).collect();
        Self { rows: data.len() / cols, cols, data }
    }

    pub fn hstack(blocks: &[&Self]) -> Self {
        assert!(!blocks.is_empty());
        let rows = blocks[0].rows;
        assert!(blocks.iter().all(|b| b.rows == rows), "hstack row mismatch");
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for b in blocks {
                data.extend_from_slice(b.row(i));
            }
        }
        Self { rows, cols, data }
    }

    /// Euclidean norm of each column.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * a;
            }
        }
        out.into_iter().map(f64::sqrt).collect()
    }

    /// Number of entries whose magnitude exceeds zero.
    pub fn count_nonzeros(&self) -> usize {
        self.data.iter().filter(|&&x| x != 0.0).count()
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

fn gemm(a: &DenseMatrix, ta: bool, b: &DenseMatrix, tb: bool) -> DenseMatrix {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "matmul inner dimension mismatch: {m}x{k} * {kb}x{n}");
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    let mut c = DenseMatrix::zeros(m, n);
    if m * n * k <= 4096 {
        // Packing overhead dominates for tiny products.
        let at = |i: usize, p: usize| if ta { a.data[p * a.cols + i] } else { a.data[i * a.cols + p] };
        let bt = |p: usize, j: usize| if tb { b.data[j * b.cols + p] } else { b.data[p * b.cols + j] };
        for i in 0..m {
            for p in 0..k {
                let x = at(i, p);
                for j in 0..n {
                    c.data[i * n + j] += x * bt(p, j);
                }
            }
        }
        return c;
    }
    // SAFETY: strides describe the row-major buffers of `a`, `b` and `c`
    // with the (possibly transposed) logical shapes checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm with scaling to avoid overflow and underflow.
pub fn norm2(x: &[f64]) -> f64 {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = x.iter().map(|v| (v / scale) * (v / scale)).sum();
    scale * s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum())
    }

    #[test]
    fn rejects_bad_input() {
        assert!(DenseMatrix::new(0, 3, vec![]).is_err());
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(matches!(
            DenseMatrix::new(2, 2, vec![1.0, 2.0, f64::NAN, 0.0]),
            Err(Error::NonFinite { row: 1, col: 0 })
        ));
    }

    #[test]
    fn transposed_products_match_naive() {
        let a = DenseMatrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 - 4.0);
        let b = DenseMatrix::from_fn(5, 4, |i, j| ((i + 2 * j) % 7) as f64 * 0.5);
        let c = DenseMatrix::from_fn(4, 3, |i, j| (i as f64 - j as f64).sin());
        assert!(a.tr_matmul(&b).sub(&naive_matmul(&a.transpose(), &b)).max_abs() < 1e-12);
        assert!(a.matmul_tr(&c).sub(&naive_matmul(&a, &c.transpose())).max_abs() < 1e-12);
        assert!(b.matmul(&c).sub(&naive_matmul(&b, &c)).max_abs() < 1e-12);
    }

    #[test]
    fn stacking_and_blocks_round_trip() {
        let a = DenseMatrix::from_fn(4, 6, |i, j| (10 * i + j) as f64);
        let top = a.row_block(0, 1);
        let rest = a.row_block(1, 4);
        assert_eq!(DenseMatrix::vstack(&[&top, &rest]), a);
        let left = a.col_block(0, 2);
        let right = a.col_block(2, 6);
        assert_eq!(DenseMatrix::hstack(&[&left, &right]), a);
    }

    #[test]
    fn serde_validates() {
        let json = r#"{"rows":1,"cols":2,"data":[1.0]}"#;
        assert!(serde_json::from_str::<DenseMatrix>(json).is_err());
        let m = DenseMatrix::identity(3);
        let back: DenseMatrix = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn norm2_handles_extremes() {
        assert_eq!(norm2(&[0.0, 0.0]), 0.0);
        assert!((norm2(&[3e200, 4e200]) - 5e200).abs() < 1e186);
        assert!((norm2(&[3e-200, 4e-200]) - 5e-200).abs() < 1e-214);
    }
}
