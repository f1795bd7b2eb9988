//! Residual attention layers and how they raise the numerical rank of
//! their input.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::attention::{mh_attention, softmax_cols, AttentionWeights};
use crate::error::{ensure, Error, Result};
use crate::linalg::{eps_rank_of_values, singular_values, DenseMatrix, SpectrumSpec};
use crate::rng::Rng;

/// One residual layer `Z = U + MH(U)/√D` of a depth-`D` stack.
#[derive(Clone, Debug)]
pub struct ResidualLayerConfig {
    pub depth: usize,
    pub weights: AttentionWeights,
}

impl ResidualLayerConfig {
    pub fn new(depth: usize, weights: AttentionWeights) -> Result<Self> {
        ensure!(depth >= 1, "depth must be positive");
        Ok(Self { depth, weights })
    }

    pub fn heads(&self) -> usize {
        self.weights.heads()
    }

    /// `√D >= 2e²h`.
    pub fn in_regime(&self) -> bool {
        (self.depth as f64).sqrt() >= 2.0 * E * E * self.heads() as f64
    }
}

pub fn residual_layer(u: &DenseMatrix, cfg: &ResidualLayerConfig) -> Result<DenseMatrix> {
    let y = mh_attention(u, &cfg.weights)?;
    Ok(u.add_scaled(&y, 1.0 / (cfg.depth as f64).sqrt()))
}

/// `2·min_{1<=j<=k}(σ_{k−j+1} + e²h/√D·σ_{⌊(j−1)/h⌋+1})`.
pub fn flow_upper_bound(spec: &SpectrumSpec, k: usize, heads: usize, depth: usize) -> Result<f64> {
    ensure!(k >= 1 && k <= spec.len(), "k = {k} outside 1..={}", spec.len());
    ensure!(heads >= 1 && depth >= 1, "heads and depth must be positive");
    Ok(upper_from_values(spec.values(), k, heads, depth))
}

fn upper_from_values(s: &[f64], k: usize, heads: usize, depth: usize) -> f64 {
    let c = E * E * heads as f64 / (depth as f64).sqrt();
    (1..=k).map(|j| s[k - j] + c * s[(j - 1) / heads]).fold(f64::INFINITY, f64::min) * 2.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowBoundEntry {
    pub k: usize,
    pub ratio: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum FlowUpperReport {
    /// A hypothesis of the bound fails; nothing was checked.
    OutOfRegime {
        reason: String,
    },
    Checked {
        entries: Vec<FlowBoundEntry>,
        violations: Vec<usize>,
    },
}

impl FlowUpperReport {
    pub fn passed(&self) -> bool {
        matches!(self, FlowUpperReport::Checked { violations, .. } if violations.is_empty())
    }
}

/// Compares `σ_k(Z)/σ₁(Z)` with the upper bound for every `k`, after
/// certifying `√D >= 2e²h`, `σ₁(U) = 1`, `‖W_Q^{(i)ᵀ}W_K^{(i)}‖₂ <= √d_h` and
/// `‖W_V^{(i)}‖₂ <= 1`.
pub fn check_flow_upper(u: &DenseMatrix, cfg: &ResidualLayerConfig) -> Result<FlowUpperReport> {
    let out = |reason: String| Ok(FlowUpperReport::OutOfRegime { reason });
    if !cfg.in_regime() {
        return out(format!("sqrt(D) < 2e^2 h for D = {}, h = {}", cfg.depth, cfg.heads()));
    }
    let s = singular_values(u)?;
    if (s[0] - 1.0).abs() > 1e-9 {
        return out(format!("sigma_1(U) = {} is not 1", s[0]));
    }
    let root = (cfg.weights.head_dim() as f64).sqrt();
    if let Some(n) = cfg.weights.head_qk_norms()?.into_iter().find(|&n| n > root) {
        return out(format!("head query-key norm {n} exceeds sqrt(d_h) = {root}"));
    }
    if let Some(n) = cfg.weights.head_v_norms()?.into_iter().find(|&n| n > 1.0) {
        return out(format!("head value norm {n} exceeds 1"));
    }
    let z = singular_values(&residual_layer(u, cfg)?)?;
    let entries: Vec<FlowBoundEntry> = (1..=s.len())
        .map(|k| FlowBoundEntry { k, ratio: z[k - 1] / z[0], bound: upper_from_values(&s, k, cfg.heads(), cfg.depth) })
        .collect();
    let violations = entries.iter().filter(|e| e.ratio > e.bound).map(|e| e.k).collect();
    Ok(FlowUpperReport::Checked { entries, violations })
}

/// Random weights meeting the upper-bound hypotheses: each head's
/// `W_Q^{(i)ᵀ}W_K^{(i)}` is rescaled to norm `qk_fill·√d_h` and each `W_V^{(i)}`
/// to norm `v_fill`, with both fills in `(0, 1]`.
pub fn random_regime_weights(
    d: usize,
    heads: usize,
    qk_fill: f64,
    v_fill: f64,
    rng: &mut Rng,
) -> Result<AttentionWeights> {
    ensure!(qk_fill > 0.0 && qk_fill <= 1.0 && v_fill > 0.0 && v_fill <= 1.0, "fills must lie in (0, 1]");
    let raw = AttentionWeights::random(d, heads, 1.0, 1.0, rng)?;
    let dh = raw.head_dim();
    let qk = raw.head_qk_norms()?;
    let vn = raw.head_v_norms()?;
    // Keep a hair of margin so power-iteration estimates certify.
    let margin = 1.0 - 1e-9;
    let mut wq = raw.wq().clone();
    let mut wk = raw.wk().clone();
    let mut wv = raw.wv().clone();
    for i in 0..heads {
        let a = (qk_fill * margin * (dh as f64).sqrt() / qk[i]).sqrt();
        let b = v_fill * margin / vn[i];
        for r in i * dh..(i + 1) * dh {
            wq.row_mut(r).iter_mut().for_each(|x| *x *= a);
            wk.row_mut(r).iter_mut().for_each(|x| *x *= a);
            wv.row_mut(r).iter_mut().for_each(|x| *x *= b);
        }
    }
    AttentionWeights::new(wq, wk, wv, heads)
}

/// Construction on which the ε-rank growth matches the upper bound up to
/// constants.
#[derive(Clone, Debug)]
pub struct FlowInstance {
    pub u: DenseMatrix,
    pub config: ResidualLayerConfig,
    pub spectrum: SpectrumSpec,
    pub alpha: f64,
    pub epsilon: f64,
}

const MAX_DOUBLINGS: usize = 80;

/// `U = [diag(σ) | 0]`; head `i` copies the first `d_h − 1` coordinates
/// (`W_V^{(i)}`) and its scores route block `i` of the tokens onto them.
pub fn adversarial_flow_instance(spec: &SpectrumSpec, heads: usize, l: usize, depth: usize) -> Result<FlowInstance> {
    let d = spec.len();
    ensure!(heads >= 1 && d.is_multiple_of(heads), "d = {d} is not divisible by h = {heads}");
    ensure!(l >= d, "need L >= d, got L = {l}, d = {d}");
    ensure!(depth >= 1, "depth must be positive");
    ensure!((spec.sigma(1) - 1.0).abs() <= 1e-12, "the spectrum must start at 1");
    let dh = d / heads;
    let s = spec.values();
    let u = DenseMatrix::from_diag(d, l, s);

    let mut wv = DenseMatrix::zeros(d, d);
    let mut wk = DenseMatrix::zeros(d, d);
    let mut q_unit = DenseMatrix::zeros(d, d);
    for i in 0..heads {
        let base = i * dh;
        for j in 0..dh {
            if j + 1 < dh {
                wv[(base + j, j)] = 1.0;
            }
            q_unit[(base + j, j)] = 1.0 / s[j];
            wk[(base + j, base + j)] = 1.0 / s[base + j];
        }
        for k in (0..d).filter(|&k| k < base || k >= base + dh) {
            wk[(base + dh - 1, k)] = 1.0 / s[k];
        }
    }

    let epsilon = (depth as f64).sqrt() * spec.sigma(d) / (5.0 * heads as f64);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut alpha = 1.0;
    for _ in 0..MAX_DOUBLINGS {
        let weights = AttentionWeights::new(q_unit.scale(alpha), wk.clone(), wv.clone(), heads)?;
        let close = (0..heads).all(|i| {
            let hw = weights.head(i);
            let g = softmax_cols(&hw.q.matmul(&u).tr_matmul(&hw.k.matmul(&u)).scale(scale));
            g.sub(&routed_pattern(i, dh, d, l)).frobenius_norm() <= epsilon
        });
        if close {
            let config = ResidualLayerConfig::new(depth, weights)?;
            return Ok(FlowInstance { u, config, spectrum: spec.clone(), alpha, epsilon });
        }
        alpha *= 2.0;
    }
    Err(Error::Precondition(format!("softmax did not saturate to {epsilon:e} within {MAX_DOUBLINGS} doublings")))
}

/// Saturated scores of head `i`: token `i·d_h + j` attends to position `j`,
/// tokens of other blocks to position `d_h − 1`, padding tokens uniformly.
fn routed_pattern(i: usize, dh: usize, d: usize, l: usize) -> DenseMatrix {
    DenseMatrix::from_fn(l, l, |row, col| {
        if col >= d {
            1.0 / l as f64
        } else {
            let target = if col / dh == i { col % dh } else { dh - 1 };
            if row == target {
                1.0
            } else {
                0.0
            }
        }
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowLowerEntry {
    pub k: usize,
    pub i: usize,
    pub ratio: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowLowerReport {
    pub entries: Vec<FlowLowerEntry>,
    pub violations: Vec<(usize, usize)>,
}

impl FlowLowerReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl FlowInstance {
    pub fn output(&self) -> Result<DenseMatrix> {
        residual_layer(&self.u, &self.config)
    }

    /// Checks `σ_k(Z)/σ₁(Z) >= ¼(σ_{(i−1)d_h+⌈k/i⌉} + 1_{⌈k/i⌉≠d_h}σ_{⌈k/i⌉}/√D)`
    /// for every `k` and every `i <= h` with `⌈k/i⌉ < d_h`.
    pub fn check_lower(&self) -> Result<FlowLowerReport> {
        let z = singular_values(&self.output()?)?;
        let d = self.spectrum.len();
        let h = self.config.heads();
        let dh = d / h;
        let root = (self.config.depth as f64).sqrt();
        let mut entries = Vec::new();
        for k in 1..=d {
            for i in 1..=h {
                let c = k.div_ceil(i);
                if c >= dh {
                    continue;
                }
                let tail = if c != dh { self.spectrum.sigma(c) / root } else { 0.0 };
                let bound = 0.25 * (self.spectrum.sigma((i - 1) * dh + c) + tail);
                entries.push(FlowLowerEntry { k, i, ratio: z[k - 1] / z[0], bound });
            }
        }
        let violations = entries.iter().filter(|e| e.ratio < e.bound).map(|e| (e.k, e.i)).collect();
        Ok(FlowLowerReport { entries, violations })
    }

    /// `min_k σ_k(Z)/σ_{⌈k/h⌉}` over `k <= d − d_h`.
    pub fn growth_constant(&self) -> Result<f64> {
        let z = singular_values(&self.output()?)?;
        let d = self.spectrum.len();
        let h = self.config.heads();
        Ok((1..=d - d / h).map(|k| z[k - 1] / self.spectrum.sigma(k.div_ceil(h))).fold(f64::INFINITY, f64::min))
    }
}

/// Spectra and ε-ranks of the input and of every layer's output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankTrajectory {
    pub eps_grid: Vec<f64>,
    pub spectra: Vec<Vec<f64>>,
    /// `ranks[layer][e]` is the ε-rank for `eps_grid[e]`.
    pub ranks: Vec<Vec<usize>>,
}

pub fn rank_trajectory(layers: &[ResidualLayerConfig], u0: &DenseMatrix, eps_grid: &[f64]) -> Result<RankTrajectory> {
    ensure!(eps_grid.iter().all(|&e| e > 0.0), "tolerances must be positive");
    let mut u = u0.clone();
    let mut spectra = vec![singular_values(&u)?];
    for layer in layers {
        u = residual_layer(&u, layer)?;
        spectra.push(singular_values(&u)?);
    }
    let ranks = spectra.iter().map(|s| eps_grid.iter().map(|&e| eps_rank_of_values(s, e)).collect()).collect();
    Ok(RankTrajectory { eps_grid: eps_grid.to_vec(), spectra, ranks })
}

/// Operator-norm estimate of the map `δ ↦ Z(U + δ) − Z(U)` at `U` along
/// `count` random directions of size `size`.
pub fn lipschitz_estimate(
    u: &DenseMatrix,
    cfg: &ResidualLayerConfig,
    size: f64,
    count: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let z = residual_layer(u, cfg)?;
    let mut kappa: f64 = 0.0;
    for _ in 0..count {
        let delta = rng.gaussian_matrix(u.rows(), u.cols(), 1.0);
        let delta = delta.scale(size / delta.frobenius_norm());
        let moved = residual_layer(&u.add(&delta), cfg)?;
        kappa = kappa.max(moved.sub(&z).frobenius_norm() / size);
    }
    Ok(kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix_with_spectrum;

    #[test]
    fn upper_bound_examples() {
        let spec = SpectrumSpec::geometric(1.0, 0.5, 16).unwrap();
        let b = flow_upper_bound(&spec, 1, 3, 100).unwrap();
        assert!((b - 2.0 * (1.0 + E * E * 3.0 / 10.0)).abs() < 1e-14);
        let far = flow_upper_bound(&spec, 6, 1, usize::MAX).unwrap();
        assert!((far - 2.0 * spec.sigma(6)).abs() < 1e-8);
        // k = 8, h = 4, D = 1e4 by direct scan
        let c = E * E * 4.0 / 100.0;
        let scan =
            (1..=8usize).map(|j| spec.sigma(8 - j + 1) + c * spec.sigma((j - 1) / 4 + 1)).fold(f64::INFINITY, f64::min);
        assert_eq!(flow_upper_bound(&spec, 8, 4, 10_000).unwrap(), 2.0 * scan);
        assert!(flow_upper_bound(&spec, 0, 1, 1).is_err());
    }

    #[test]
    fn zero_values_leave_input() {
        let mut rng = Rng::new(1);
        let w = AttentionWeights::new(
            rng.gaussian_matrix(8, 8, 1.0),
            rng.gaussian_matrix(8, 8, 1.0),
            DenseMatrix::zeros(8, 8),
            2,
        )
        .unwrap();
        let cfg = ResidualLayerConfig::new(4, w).unwrap();
        let u = rng.gaussian_matrix(8, 12, 1.0);
        assert_eq!(residual_layer(&u, &cfg).unwrap(), u);
        let t = rank_trajectory(&[cfg.clone(), cfg], &u, &[1e-3]).unwrap();
        assert_eq!(t.spectra.len(), 3);
        assert!(t.ranks.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn update_shrinks_with_depth() {
        let mut rng = Rng::new(2);
        let w = AttentionWeights::random(8, 2, 1.0, 1.0, &mut rng).unwrap();
        let u = rng.gaussian_matrix(8, 10, 1.0);
        let gaps: Vec<f64> = [4, 64, 1024]
            .iter()
            .map(|&d| {
                let cfg = ResidualLayerConfig::new(d, w.clone()).unwrap();
                residual_layer(&u, &cfg).unwrap().sub(&u).frobenius_norm()
            })
            .collect();
        assert!(gaps.windows(2).all(|g| g[1] < g[0]));
    }

    #[test]
    fn regime_weights_certify() {
        let mut rng = Rng::new(3);
        let w = random_regime_weights(16, 4, 1.0, 1.0, &mut rng).unwrap();
        let spec = SpectrumSpec::exponential(0.3, 16).unwrap();
        let u = matrix_with_spectrum(16, 24, &spec, &mut rng).unwrap();
        let cfg = ResidualLayerConfig::new(4000, w).unwrap();
        let rep = check_flow_upper(&u, &cfg).unwrap();
        assert!(matches!(rep, FlowUpperReport::Checked { .. }), "{rep:?}");
        assert!(rep.passed());
        let shallow = ResidualLayerConfig::new(10, cfg.weights.clone()).unwrap();
        assert!(matches!(check_flow_upper(&u, &shallow).unwrap(), FlowUpperReport::OutOfRegime { .. }));
    }

    #[test]
    fn construction_meets_lower_bound() {
        let spec = SpectrumSpec::geometric(1.0, 0.8, 16).unwrap();
        let inst = adversarial_flow_instance(&spec, 4, 20, 9).unwrap();
        let rep = inst.check_lower().unwrap();
        assert!(!rep.entries.is_empty());
        assert!(rep.passed(), "{:?}", rep.violations);
        let s = singular_values(&inst.u).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15);
    }
}
