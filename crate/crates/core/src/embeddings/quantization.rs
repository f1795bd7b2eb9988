use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg::DenseMatrix;
use crate::rng::Rng;

/// Lookup-table embedding over `V` equal bins of `[-x_max, x_max]`.
///
/// Bins are left-closed `[a, b)` except the last, which is closed; inputs
/// outside the domain fall into the nearest boundary bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizationEmbedding {
    pub x_max: f64,
    pub table: DenseMatrix,
}

impl QuantizationEmbedding {
    /// Random untrained table with i.i.d. `N(0, 1/d)` entries.
    pub fn random(d: usize, bins: usize, x_max: f64, rng: &mut Rng) -> Result<Self> {
        ensure!(bins >= 2, "need at least 2 bins, got {bins}");
        ensure!(d >= 1, "embedding dimension must be positive");
        ensure!(x_max > 0.0, "x_max must be positive");
        let table = rng.gaussian_matrix(d, bins, 1.0 / (d as f64).sqrt());
        Ok(Self { x_max, table })
    }

    pub fn bins(&self) -> usize {
        self.table.cols()
    }

    pub fn dim(&self) -> usize {
        self.table.rows()
    }

    pub fn bin_index(&self, x: f64) -> usize {
        let v = self.bins();
        let t = (x.clamp(-self.x_max, self.x_max) + self.x_max) / (2.0 * self.x_max);
        ((t * v as f64).floor() as usize).min(v - 1)
    }

    pub fn embed_scalars(&self, xs: &[f64]) -> Result<DenseMatrix> {
        ensure!(!xs.is_empty(), "need at least one input");
        let idx: Vec<usize> = xs.iter().map(|&x| self.bin_index(x)).collect();
        Ok(self.table.select_columns(&idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_partition_domain() {
        let e = QuantizationEmbedding::random(4, 10, 15.0, &mut Rng::new(0)).unwrap();
        assert_eq!(e.bin_index(-15.0), 0);
        assert_eq!(e.bin_index(-100.0), 0);
        assert_eq!(e.bin_index(15.0), 9);
        assert_eq!(e.bin_index(1e9), 9);
        // left-closed: the boundary between bins 4 and 5 is 0
        assert_eq!(e.bin_index(0.0), 5);
        assert_eq!(e.bin_index(-1e-12), 4);
    }

    #[test]
    fn same_bin_same_column() {
        let e = QuantizationEmbedding::random(6, 8, 15.0, &mut Rng::new(1)).unwrap();
        let x = e.embed_scalars(&[0.1, 0.2]).unwrap();
        assert_eq!(x.column(0), x.column(1));
    }
}
