//! Singular-value decay bounds for embedded matrices and their numeric checks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::mlp::MlpEmbedding;
use crate::error::{ensure, Error, Result};
use crate::linalg::{singular_values, spectral_norm, DenseMatrix};

/// Constant in front of the swish decay rate, calibrated once against
/// brute-force spectra (worst observed ratio about 0.02) and then frozen.
pub const SWISH_CONSTANT: f64 = 4.0;

/// Upper bound on `σ_{j+1}` of a `d x L` embedded matrix of scalar inputs in
/// `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DecayBound {
    /// Each `φᵢ` has `ν` derivatives with the last of variation at most `V`.
    BoundedVariation { nu: f64, variation: f64, d: usize, l: usize },
    /// Each `φᵢ` is analytic and bounded by `M` on the Bernstein ellipse `E_ρ`.
    Analytic { rho: f64, magnitude: f64, d: usize, l: usize },
}

impl DecayBound {
    /// The swish corollary as an analytic bound with `ρ = 1 + π/(2β)`.
    pub fn swish(beta: f64, d: usize, l: usize) -> Result<Self> {
        ensure!(beta > 0.0, "beta must be positive");
        let rho = 1.0 + PI / (2.0 * beta);
        // 2M/(ρ-1) = c(β + 1/β) reproduces swish_bound exactly.
        let magnitude = SWISH_CONSTANT * (beta + 1.0 / beta) * (rho - 1.0) / 2.0;
        Ok(DecayBound::Analytic { rho, magnitude, d, l })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DecayBound::BoundedVariation { nu, variation, d, l } => {
                ensure!(nu >= 1.0 && variation > 0.0, "need nu >= 1 and V > 0");
                ensure!(d > 0 && l > 0, "dimensions must be positive");
            }
            DecayBound::Analytic { rho, magnitude, d, l } => {
                ensure!(rho > 1.0 && magnitude > 0.0, "need rho > 1 and M > 0");
                ensure!(d > 0 && l > 0, "dimensions must be positive");
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        match *self {
            DecayBound::BoundedVariation { d, l, .. } | DecayBound::Analytic { d, l, .. } => (d, l),
        }
    }

    /// Bound on `σ_{j+1}`; `None` where the bounded-variation form needs
    /// `j > ν + 1`.
    pub fn value(&self, j: usize) -> Option<f64> {
        let jf = j as f64;
        match *self {
            DecayBound::BoundedVariation { nu, variation, d, l } => {
                let base = jf - 1.0 - nu;
                (base > 0.0).then(|| 2.0 * variation * ((d * l) as f64).sqrt() / (PI * nu * base.powf(nu)))
            }
            DecayBound::Analytic { rho, magnitude, d, l } => {
                Some(2.0 * magnitude * ((d * l) as f64).sqrt() * rho.powf(1.0 - jf) / (rho - 1.0))
            }
        }
    }
}

/// `c·√(dL)·(β + β⁻¹)·(1 + π/(2β))^{−j+1}` with `c = SWISH_CONSTANT`.
pub fn swish_bound(beta: f64, d: usize, l: usize, j: usize) -> f64 {
    let rho = 1.0 + PI / (2.0 * beta);
    SWISH_CONSTANT * ((d * l) as f64).sqrt() * (beta + 1.0 / beta) * rho.powf(1.0 - j as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayEntry {
    pub j: usize,
    /// `σ_{j+1}` of the checked matrix.
    pub sigma: f64,
    pub bound: f64,
    pub holds: bool,
    /// False when the bound sits below the floating-point floor of the SVD,
    /// where the measured value is rounding noise.
    pub resolvable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayReport {
    pub entries: Vec<DecayEntry>,
    pub floor: f64,
    pub passed: bool,
}

impl DecayReport {
    pub fn violations(&self) -> impl Iterator<Item = &DecayEntry> {
        self.entries.iter().filter(|e| e.resolvable && !e.holds)
    }
}

/// Compares every `σ_{j+1}(Ψ)` with the bound for all `j` where it applies.
pub fn verify_decay_bound(psi: &DenseMatrix, bound: &DecayBound) -> Result<DecayReport> {
    bound.validate()?;
    if bound.dims() != psi.shape() {
        return Err(Error::Precondition(format!(
            "bound is for {:?} but the matrix is {:?}",
            bound.dims(),
            psi.shape()
        )));
    }
    let s = singular_values(psi)?;
    let floor = psi.rows().max(psi.cols()) as f64 * f64::EPSILON * s[0];
    let entries: Vec<DecayEntry> = (1..s.len())
        .filter_map(|j| {
            let b = bound.value(j)?;
            let sigma = s[j];
            Some(DecayEntry { j, sigma, bound: b, holds: sigma <= b, resolvable: b > floor })
        })
        .collect();
    let passed = entries.iter().all(|e| e.holds || !e.resolvable);
    Ok(DecayReport { entries, floor, passed })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RankCertificate {
    /// Number of singular values above the threshold.
    pub count: usize,
    /// `(1 + ε⁻²)·k`.
    pub bound: f64,
    /// `ε‖W₂‖₂‖W₁X‖₂`.
    pub threshold: f64,
}

impl RankCertificate {
    pub fn holds(&self) -> bool {
        self.count as f64 <= self.bound
    }
}

/// Counts singular values of the MLP output above `ε‖W₂‖₂‖W₁X‖₂` for
/// rank-`k` patches `X` (`k x L`).
pub fn mlp_rank_certificate(x: &DenseMatrix, emb: &MlpEmbedding, eps: f64) -> Result<RankCertificate> {
    ensure!(eps > 0.0, "eps must be positive");
    let out = emb.embed_patches(x)?;
    let k = emb.patch_width();
    let threshold = eps * spectral_norm(&emb.w2)? * spectral_norm(&emb.w1.matmul(x))?;
    let count = singular_values(&out)?.iter().filter(|&&s| s > threshold).count();
    Ok(RankCertificate { count, bound: (1.0 + eps.powi(-2)) * k as f64, threshold })
}
