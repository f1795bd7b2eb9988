//! Patch embeddings mapping scalar series into `R^d`, and the bounds that
//! control the spectra of the embedded matrices.

mod bounds;
mod chebyshev;
mod mlp;
mod quantization;
mod swish;

use serde::{Deserialize, Serialize};

pub use bounds::{
    mlp_rank_certificate, swish_bound, verify_decay_bound, DecayBound, DecayEntry, DecayReport, RankCertificate,
    SWISH_CONSTANT,
};
pub use chebyshev::{chebyshev_eval, make_chebyshev_embedding, ChebyshevEmbedding};
pub use mlp::{Activation, MlpEmbedding};
pub use quantization::QuantizationEmbedding;
pub use swish::SwishEmbedding;

use crate::error::{ensure, Error, Result};
use crate::linalg::DenseMatrix;

/// Default quantization range.
pub const DEFAULT_X_MAX: f64 = 15.0;

/// One of the four embedding families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum EmbeddingSpec {
    Quantization(QuantizationEmbedding),
    Mlp(MlpEmbedding),
    Swish(SwishEmbedding),
    Chebyshev(ChebyshevEmbedding),
}

impl EmbeddingSpec {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingSpec::Quantization(e) => e.dim(),
            EmbeddingSpec::Mlp(e) => e.dim(),
            EmbeddingSpec::Swish(e) => e.dim(),
            EmbeddingSpec::Chebyshev(e) => e.dim(),
        }
    }

    /// Number of scalars per patch: `k` for the MLP, 1 otherwise.
    pub fn patch_width(&self) -> usize {
        match self {
            EmbeddingSpec::Mlp(e) => e.patch_width(),
            _ => 1,
        }
    }

    /// Embeds each patch into one column of a `d x L` matrix.
    pub fn embed(&self, patches: &[Vec<f64>]) -> Result<DenseMatrix> {
        ensure!(!patches.is_empty(), "need at least one patch");
        let k = self.patch_width();
        if let Some(p) = patches.iter().position(|p| p.len() != k) {
            return Err(Error::Precondition(format!(
                "patch {p} has width {}, embedding expects {k}",
                patches[p].len()
            )));
        }
        match self {
            EmbeddingSpec::Mlp(e) => {
                let x = DenseMatrix::from_columns(patches);
                e.embed_patches(&x)
            }
            _ => {
                let xs: Vec<f64> = patches.iter().map(|p| p[0]).collect();
                self.embed_scalars(&xs)
            }
        }
    }

    /// Splits a series into consecutive patches (dropping a leading
    /// remainder) and embeds them.
    pub fn embed_series(&self, series: &[f64]) -> Result<DenseMatrix> {
        let k = self.patch_width();
        ensure!(series.len() >= k, "series shorter than one patch");
        let skip = series.len() % k;
        let patches: Vec<Vec<f64>> = series[skip..].chunks_exact(k).map(<[f64]>::to_vec).collect();
        self.embed(&patches)
    }

    fn embed_scalars(&self, xs: &[f64]) -> Result<DenseMatrix> {
        match self {
            EmbeddingSpec::Quantization(e) => e.embed_scalars(xs),
            EmbeddingSpec::Swish(e) => e.embed_scalars(xs),
            EmbeddingSpec::Chebyshev(e) => e.embed_scalars(xs),
            EmbeddingSpec::Mlp(e) => {
                let x = DenseMatrix::from_fn(1, xs.len(), |_, j| xs[j]);
                e.embed_patches(&x)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn width_mismatch_is_rejected() {
        let mut rng = Rng::new(0);
        let spec = EmbeddingSpec::Mlp(MlpEmbedding::random(2, 6, 4, Activation::Relu, &mut rng).unwrap());
        assert!(spec.embed(&[vec![1.0]]).is_err());
        assert_eq!(spec.embed(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap().shape(), (6, 2));
        assert_eq!(spec.embed_series(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap().cols(), 2);
    }

    #[test]
    fn every_family_has_d_rows() {
        let mut rng = Rng::new(1);
        let d = 12;
        let specs = [
            EmbeddingSpec::Quantization(QuantizationEmbedding::random(d, 16, DEFAULT_X_MAX, &mut rng).unwrap()),
            EmbeddingSpec::Mlp(MlpEmbedding::random(1, d, 8, Activation::Relu, &mut rng).unwrap()),
            EmbeddingSpec::Swish(SwishEmbedding::random(d, 1.0, &mut rng).unwrap()),
            EmbeddingSpec::Chebyshev(make_chebyshev_embedding(3, d, DEFAULT_X_MAX, &mut rng).unwrap()),
        ];
        let xs: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin() * 10.0).collect();
        for s in &specs {
            let x = s.embed_series(&xs).unwrap();
            assert_eq!(x.rows(), d);
            assert!(x.is_finite());
        }
    }
}
