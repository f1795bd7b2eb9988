//! The experiment bodies. Each trial draws from its own sub-stream of the
//! config seed, so trials run in parallel and results do not depend on
//! scheduling.

use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentId};
use super::fit::fit_loglog_slope;
use super::plot::LinePlot;
use super::table::{format_f64, Cell, Provenance, ResultTable};
use super::{ExperimentRun, Metric};
use crate::attention::{compress_on_vocabulary, headwise_sparse_sketch, mh_attention, AttentionWeights};
use crate::embeddings::{
    make_chebyshev_embedding, mlp_rank_certificate, verify_decay_bound, Activation, DecayBound, MlpEmbedding,
    SwishEmbedding,
};
use crate::error::{Error, Result};
use crate::flow::{rank_trajectory, residual_layer, ResidualLayerConfig};
use crate::linalg::{
    eps_rank_of_values, matrix_with_spectrum, rowspace_distance, singular_values, DenseMatrix, SpectrumSpec,
};
use crate::rng::Rng;

/// Query/key entry standard deviation for the compression sweeps; large
/// enough that the softmax is far from uniform.
pub const COMPRESS_QK_STD: f64 = 3.162_277_660_168_379_5;
/// Number of ranks in the compress-slope sweep.
pub const COMPRESS_POINTS: usize = 16;
/// Sketch rows per head in sketch-heads.
pub const SKETCH_RANK: usize = 4;
pub const SKETCH_HEADS: [usize; 6] = [1, 2, 4, 8, 16, 32];
pub const FLOW_HEADS: [usize; 3] = [1, 4, 16];
pub const FLOW_QK_STD: f64 = 10.0;
pub const SWISH_BETAS: [f64; 3] = [0.5, 1.0, 2.0];
pub const CHEBYSHEV_RANK: usize = 4;
/// Below this, a Chebyshev singular-value ratio counts as zero.
pub const CHEBYSHEV_TOL: f64 = 1e-10;
pub const MLP_PATCH: usize = 2;

pub(super) fn evaluate(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentId::CompressSlope => compress_slope(cfg),
        ExperimentId::DimensionSlope => dimension_slope(cfg),
        ExperimentId::SketchHeads => sketch_heads(cfg),
        ExperimentId::FlowHeads => flow_heads(cfg),
        ExperimentId::EmbeddingDecay => embedding_decay(cfg),
        ExperimentId::ScheduleDemo => schedule_demo(cfg),
    }
}

fn new_table(cfg: &ExperimentConfig, name: &str, columns: &[&str]) -> Result<ResultTable> {
    let provenance = Provenance {
        experiment: cfg.experiment.name().into(),
        table: name.into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    ResultTable::new(provenance, columns)
}

fn main_table(cfg: &ExperimentConfig) -> Result<ResultTable> {
    new_table(cfg, cfg.experiment.name(), cfg.experiment.columns())
}

fn trial_rng(cfg: &ExperimentConfig, trial: usize) -> Rng {
    Rng::new(cfg.seed).substream(cfg.experiment.name(), trial as u64)
}

/// Runs `f` on every trial in parallel, keeping trial order.
fn trials<T: Send>(cfg: &ExperimentConfig, f: impl Fn(usize, &mut Rng) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..cfg.trials).into_par_iter().map(|t| f(t, &mut trial_rng(cfg, t))).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn spectrum_for(cfg: &ExperimentConfig, d: usize) -> Result<SpectrumSpec> {
    if let Some(c) = cfg.spectrum.count.filter(|&c| c != d) {
        return Err(Error::Config(format!("{} needs a spectrum of length d = {d}, got count = {c}", cfg.experiment)));
    }
    cfg.spectrum.build(d)
}

fn need(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

/// Frobenius distance between the attention outputs on `xi` of the original
/// weights and of their projection onto the top `d̃` vocabulary directions.
fn projection_error(w: &AttentionWeights, xi: &DenseMatrix, base: &DenseMatrix, d_tilde: usize) -> Result<f64> {
    let c = compress_on_vocabulary(w, xi, d_tilde)?;
    Ok(base.sub(&mh_attention(xi, &c.compressed)?).frobenius_norm())
}

/// `COMPRESS_POINTS` evenly spaced ranks from `d/32` to `d/2`.
pub fn compress_ranks(d: usize) -> Vec<usize> {
    let lo = (d as f64 / 32.0).max(1.0);
    let hi = d as f64 / 2.0;
    let mut r: Vec<usize> = (0..COMPRESS_POINTS)
        .map(|k| (lo + (hi - lo) * k as f64 / (COMPRESS_POINTS - 1) as f64).round() as usize)
        .filter(|&r| r >= 1 && r < d)
        .collect();
    r.dedup();
    r
}

fn compress_slope(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let (d, n) = (cfg.dims.d, cfg.dims.n);
    need(n >= d, || format!("compress-slope needs n >= d, got n = {n}, d = {d}"))?;
    let spec = spectrum_for(cfg, d)?;
    let ranks = compress_ranks(d);
    need(ranks.len() >= 3, || format!("d = {d} is too small for a rank sweep"))?;
    let per_trial = trials(cfg, |_, rng| {
        let xi = matrix_with_spectrum(d, n, &spec, rng)?;
        let w = AttentionWeights::random(d, 1, COMPRESS_QK_STD, 1.0, rng)?;
        let base = mh_attention(&xi, &w)?;
        ranks
            .iter()
            .map(|&r| Ok((r, spec.values()[r], projection_error(&w, &xi, &base, r)?)))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut table = main_table(cfg)?;
    let mut slopes = Vec::new();
    let mut r2 = Vec::new();
    for rows in &per_trial {
        for &(r, tail, err) in rows {
            table.push(vec![r.into(), tail.into(), err.into()])?;
        }
        let xs: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.2).collect();
        if let Ok(f) = fit_loglog_slope(&xs, &ys) {
            slopes.push(f.slope);
            r2.push(f.r_squared);
        }
    }
    let mut metrics = Vec::new();
    if !slopes.is_empty() {
        let pooled = fit_loglog_slope(&table.column_f64("sigma_tail")?, &table.column_f64("frob_error")?)?;
        metrics.push(Metric::new("median_slope", median(slopes)));
        metrics.push(Metric::new("median_r_squared", median(r2)));
        metrics.push(Metric::new("pooled_slope", pooled.slope));
    }
    let plot = LinePlot::new("sigma_tail", &["frob_error"]).log_axes(true, true).guide(1.0).title("compress-slope");
    Ok(ExperimentRun::new(cfg, vec![(table, Some(plot))], metrics))
}

/// Dimensions `d/8, d/4, d/2, d` for the top dimension `d`.
pub fn dimension_sweep(d: usize) -> Vec<usize> {
    vec![d / 8, d / 4, d / 2, d]
}

fn dimension_slope(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let ds = dimension_sweep(cfg.dims.d);
    let n = cfg.dims.n;
    need(ds[0] >= 4 && cfg.dims.d.is_multiple_of(8), || {
        format!("dimension-slope needs d >= 32 divisible by 8, got {}", cfg.dims.d)
    })?;
    need(n >= cfg.dims.d, || format!("dimension-slope needs n >= d, got n = {n}"))?;
    need(cfg.spectrum.count.is_none(), || "dimension-slope sizes the spectrum from each d; drop count".into())?;
    let d_tilde = ds[0] / 4;
    let per_trial = trials(cfg, |_, rng| {
        ds.iter()
            .map(|&d| {
                let mut r = rng.substream("d", d as u64);
                let spec = cfg.spectrum.build(d)?;
                let xi = matrix_with_spectrum(d, n, &spec, &mut r)?;
                let w = AttentionWeights::random(d, 1, COMPRESS_QK_STD, 1.0, &mut r)?;
                let base = mh_attention(&xi, &w)?;
                Ok((d, projection_error(&w, &xi, &base, d_tilde)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut table = main_table(cfg)?;
    for &(d, e) in per_trial.iter().flatten() {
        table.push(vec![d.into(), e.into()])?;
    }
    let mut metrics = vec![Metric::new("d_tilde", d_tilde as f64)];
    if !table.is_empty() {
        let f = fit_loglog_slope(&table.column_f64("d")?, &table.column_f64("frob_error")?)?;
        metrics.push(Metric::new("pooled_slope", f.slope));
        metrics.push(Metric::new("pooled_r_squared", f.r_squared));
    }
    let plot = LinePlot::new("d", &["frob_error"]).log_axes(true, true).guide(0.5).title("dimension-slope");
    Ok(ExperimentRun::new(cfg, vec![(table, Some(plot))], metrics))
}

fn sketch_heads(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let (d, l) = (cfg.dims.d, cfg.dims.l);
    need(l >= d, || format!("sketch-heads needs l >= d, got l = {l}, d = {d}"))?;
    let spec = spectrum_for(cfg, d)?;
    let hs: Vec<usize> = SKETCH_HEADS.iter().copied().filter(|&h| d % h == 0 && h * SKETCH_RANK <= d).collect();
    need(!hs.is_empty(), || format!("no head count fits d = {d}"))?;
    let per_trial = trials(cfg, |_, rng| {
        let x = matrix_with_spectrum(d, l, &spec, rng)?;
        hs.iter()
            .map(|&h| {
                let s = headwise_sparse_sketch(&x, h, SKETCH_RANK, rng)?;
                Ok((h, rowspace_distance(&x, &s)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut table = main_table(cfg)?;
    for &(h, dist) in per_trial.iter().flatten() {
        table.push(vec![h.into(), dist.into()])?;
    }
    let mut metrics = Vec::new();
    if cfg.trials > 0 {
        for &h in &hs {
            let v = per_trial.iter().flatten().filter(|r| r.0 == h).map(|r| r.1).collect();
            metrics.push(Metric::new(&format!("median_distance_h{h}"), median(v)));
        }
    }
    let plot = LinePlot::new("h", &["rowspace_distance"]).log_axes(true, true).title("sketch-heads");
    Ok(ExperimentRun::new(cfg, vec![(table, Some(plot))], metrics))
}

fn flow_heads(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let (d, l) = (cfg.dims.d, cfg.dims.l);
    need(l >= d, || format!("flow-heads needs l >= d, got l = {l}, d = {d}"))?;
    let spec = spectrum_for(cfg, d)?;
    let hs: Vec<usize> = FLOW_HEADS.iter().copied().filter(|&h| d % h == 0).collect();
    let per_trial = trials(cfg, |_, rng| {
        let x = matrix_with_spectrum(d, l, &spec, rng)?;
        let w = AttentionWeights::random(d, 1, FLOW_QK_STD, 1.0, rng)?;
        hs.iter()
            .map(|&h| {
                let layer = ResidualLayerConfig::new(1, w.with_heads(h)?)?;
                Ok((h, singular_values(&residual_layer(&x, &layer)?)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut table = main_table(cfg)?;
    for (h, s) in per_trial.iter().flatten() {
        for (j, v) in s.iter().enumerate() {
            table.push(vec![(*h).into(), (j + 1).into(), (v / s[0]).into()])?;
        }
    }
    let mut metrics = Vec::new();
    if cfg.trials > 0 {
        for &eps in &cfg.eps_grid {
            for &h in &hs {
                let ranks = per_trial
                    .iter()
                    .flatten()
                    .filter(|r| r.0 == h)
                    .map(|r| eps_rank_of_values(&r.1, eps) as f64)
                    .collect();
                metrics.push(Metric::new(&format!("median_eps_rank_h{h}_eps{}", format_f64(eps)), median(ranks)));
            }
        }
    }
    let trajectory = flow_trajectory(cfg)?;
    let plot = LinePlot::new("j", &["sigma_ratio"]).series_by("h").log_axes(false, true).title("flow-heads");
    let traj_plot = LinePlot::new("layer", &["median_rank"]).series_by("eps").title("rank trajectory");
    Ok(ExperimentRun::new(cfg, vec![(table, Some(plot)), (trajectory, Some(traj_plot))], metrics))
}

/// Layers in the rank trajectory that accompanies flow-heads.
pub const TRAJECTORY_LAYERS: usize = 6;
pub const TRAJECTORY_HEADS: usize = 8;
pub const TRAJECTORY_V_STD: f64 = 0.125;

/// Median ε-rank after each of a stack of residual layers applied to a
/// rank-one input `u fᵀ` with a sinusoidal profile `f`.
fn flow_trajectory(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let d = cfg.dims.d;
    let h = if d.is_multiple_of(TRAJECTORY_HEADS) { TRAJECTORY_HEADS } else { 1 };
    let per_trial = trials(cfg, |t, _| {
        let mut rng = Rng::new(cfg.seed).substream("flow-trajectory", t as u64);
        let mut u = rng.gaussian_vec(d);
        let nu = crate::linalg::norm2(&u);
        u.iter_mut().for_each(|v| *v /= nu);
        let phase = rng.uniform(0.0, 6.0);
        let f: Vec<f64> =
            (0..d).map(|j| (std::f64::consts::TAU * j as f64 / (d - 1).max(1) as f64 + phase).sin()).collect();
        let nf = crate::linalg::norm2(&f);
        let u0 = DenseMatrix::from_fn(d, d, |i, j| u[i] * f[j] / nf);
        let layers = (0..TRAJECTORY_LAYERS)
            .map(|_| {
                let w = AttentionWeights::random(d, h, FLOW_QK_STD, TRAJECTORY_V_STD, &mut rng)?;
                ResidualLayerConfig::new(TRAJECTORY_LAYERS, w)
            })
            .collect::<Result<Vec<_>>>()?;
        rank_trajectory(&layers, &u0, &cfg.eps_grid)
    })?;
    let mut table = new_table(cfg, "flow-trajectory", &["layer", "eps", "median_rank"])?;
    if cfg.trials > 0 {
        for layer in 0..=TRAJECTORY_LAYERS {
            for (e, &eps) in cfg.eps_grid.iter().enumerate() {
                let ranks = per_trial.iter().map(|t| t.ranks[layer][e] as f64).collect();
                table.push(vec![layer.into(), eps.into(), median(ranks).into()])?;
            }
        }
    }
    Ok(table)
}

struct DecayRows {
    family: String,
    /// `(j, σ_j/σ₁, bound/σ₁, violated)` with 1-based `j`.
    rows: Vec<(usize, f64, f64, bool)>,
}

fn embedding_decay(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let (d, l) = (cfg.dims.d, cfg.dims.l);
    need(d > CHEBYSHEV_RANK, || format!("embedding-decay needs d > {CHEBYSHEV_RANK}"))?;
    let per_trial = trials(cfg, |_, rng| {
        let xs: Vec<f64> = (0..l).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut out = Vec::new();
        for beta in SWISH_BETAS {
            let psi = SwishEmbedding::random(d, beta, rng)?.embed_scalars(&xs)?;
            let s1 = singular_values(&psi)?[0];
            let report = verify_decay_bound(&psi, &DecayBound::swish(beta, d, l)?)?;
            let rows = report
                .entries
                .iter()
                .map(|e| (e.j + 1, e.sigma / s1, e.bound / s1, e.resolvable && !e.holds))
                .collect();
            out.push(DecayRows { family: format!("swish-beta-{}", format_f64(beta)), rows });
        }
        let cheb = make_chebyshev_embedding(CHEBYSHEV_RANK, d, 1.0, rng)?;
        let s = singular_values(&cheb.embed_scalars(&xs)?)?;
        let rows = (1..s.len())
            .map(|j| {
                let bound = if j >= CHEBYSHEV_RANK { CHEBYSHEV_TOL } else { 1.0 };
                (j + 1, s[j] / s[0], bound, s[j] / s[0] > bound)
            })
            .collect();
        out.push(DecayRows { family: format!("chebyshev-k{CHEBYSHEV_RANK}"), rows });
        let mlp = MlpEmbedding::random(MLP_PATCH, d, d, Activation::Tanh, rng)?;
        let x = rng.gaussian_matrix(MLP_PATCH, l, 1.0);
        let s = singular_values(&mlp.embed_patches(&x)?)?;
        // The count certificate at every ε gives σ_j <= M / √(j/k − 1) for j > k.
        let cert = mlp_rank_certificate(&x, &mlp, 1.0)?;
        let m = cert.threshold;
        let k = MLP_PATCH as f64;
        let rows = (1..s.len())
            .map(|j| {
                let jj = (j + 1) as f64;
                let bound = if jj > k { m / (jj / k - 1.0).sqrt() / s[0] } else { f64::INFINITY };
                (j + 1, s[j] / s[0], bound, s[j] / s[0] > bound * (1.0 + 1e-12))
            })
            .collect();
        out.push(DecayRows { family: format!("mlp-k{MLP_PATCH}"), rows });
        Ok(out)
    })?;
    let mut table = main_table(cfg)?;
    let mut violations = Vec::new();
    for (t, fams) in per_trial.iter().enumerate() {
        for fam in fams {
            for &(j, ratio, bound, bad) in &fam.rows {
                table.push(vec![Cell::from(fam.family.as_str()), j.into(), ratio.into(), bound.into()])?;
                if bad {
                    violations.push(format!("trial {t}, {}: sigma_{j}/sigma_1 = {ratio:e} > {bound:e}", fam.family));
                }
            }
        }
    }
    let metrics = vec![Metric::new("violations", violations.len() as f64)];
    let plot = LinePlot::new("j", &["sigma_ratio", "bound"])
        .series_by("family")
        .log_axes(false, true)
        .title("embedding-decay");
    let mut run = ExperimentRun::new(cfg, vec![(table, Some(plot))], metrics);
    run.violations = violations;
    Ok(run)
}

fn schedule_demo(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let d = cfg.dims.d;
    let s = cfg.schedule;
    let mut table = main_table(cfg)?;
    let mut metrics = Vec::new();
    if cfg.trials > 0 {
        let mut total = 0;
        for layer in 0..s.layers {
            let rank = s.schedule.rank_clamped(layer, d);
            // Q, K and V, each stored as the cheaper of factors and dense.
            let params = 3 * (2 * rank * d).min(d * d);
            total += params;
            table.push(vec![layer.into(), rank.into(), params.into()])?;
        }
        metrics.push(Metric::new("size_ratio", total as f64 / (3 * d * d * s.layers) as f64));
    }
    let plot = LinePlot::new("layer", &["rank"]).title("schedule-demo");
    Ok(ExperimentRun::new(cfg, vec![(table, Some(plot))], metrics))
}
