//! Experiment configuration documents.
//!
//! A config is a TOML document. Only `experiment` is required; every other
//! key falls back to the experiment's desk-scale default.
//!
//! ```toml
//! version = 1                  # schema version, must be 1
//! experiment = "compress-slope"
//! seed = 7
//! trials = 10
//! out_dir = "results"
//! paper_scale = false          # larger default dims where they exist
//! eps_grid = [1e-3]            # descending tolerances
//!
//! [dims]                       # any subset
//! d = 128
//! l = 512
//! n = 512
//!
//! [spectrum]                   # log_hi plus exactly one of log_lo, rate
//! log_hi = 0.0
//! log_lo = -5.0                # or: rate = 0.1 (sigma_j = e^{log_hi - rate (j-1)})
//! count = 128                  # defaults to d
//!
//! [schedule]                   # schedule-demo only
//! d_tilde_0 = 3.0
//! alpha = 0.27
//! layers = 12
//! ```
//!
//! Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compressor::RankSchedule;
use crate::error::{Error, Result};
use crate::linalg::SpectrumSpec;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    CompressSlope,
    DimensionSlope,
    SketchHeads,
    FlowHeads,
    EmbeddingDecay,
    ScheduleDemo,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::CompressSlope,
        ExperimentId::DimensionSlope,
        ExperimentId::SketchHeads,
        ExperimentId::FlowHeads,
        ExperimentId::EmbeddingDecay,
        ExperimentId::ScheduleDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::CompressSlope => "compress-slope",
            ExperimentId::DimensionSlope => "dimension-slope",
            ExperimentId::SketchHeads => "sketch-heads",
            ExperimentId::FlowHeads => "flow-heads",
            ExperimentId::EmbeddingDecay => "embedding-decay",
            ExperimentId::ScheduleDemo => "schedule-demo",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentId::CompressSlope => "compression error against the first discarded vocabulary singular value",
            ExperimentId::DimensionSlope => "compression error against the embedding dimension at a fixed rank",
            ExperimentId::SketchHeads => "row-space distance of head-wise sparse sketches against the head count",
            ExperimentId::FlowHeads => "output spectrum of one residual layer for several head counts",
            ExperimentId::EmbeddingDecay => "embedded-matrix spectra against their decay bounds",
            ExperimentId::ScheduleDemo => "per-layer ranks and parameter counts of a rank schedule",
        }
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            ExperimentId::CompressSlope => &["d_tilde", "sigma_tail", "frob_error"],
            ExperimentId::DimensionSlope => &["d", "frob_error"],
            ExperimentId::SketchHeads => &["h", "rowspace_distance"],
            ExperimentId::FlowHeads => &["h", "j", "sigma_ratio"],
            ExperimentId::EmbeddingDecay => &["family", "j", "sigma_ratio", "bound"],
            ExperimentId::ScheduleDemo => &["layer", "rank", "params"],
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment id {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub l: usize,
    pub n: usize,
}

/// Log-uniform spectrum `σ_j = e^{log_hi − step·(j−1)}` of length `count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumShape {
    pub log_hi: f64,
    pub decay: Decay,
    pub count: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decay {
    /// Exponent falls linearly to `log_lo` at the last value.
    Range { log_lo: f64 },
    /// Exponent falls by `rate` per index, whatever the length.
    Rate { rate: f64 },
}

impl SpectrumShape {
    /// Spectrum of length `count`, or `d` when no count is set.
    pub fn build(&self, d: usize) -> Result<SpectrumSpec> {
        let count = self.count.unwrap_or(d);
        match self.decay {
            Decay::Range { log_lo } => SpectrumSpec::log_spaced(log_lo, self.log_hi, count),
            Decay::Rate { rate } => {
                let s = SpectrumSpec::exponential(rate, count)?;
                SpectrumSpec::new(s.values().iter().map(|v| v * self.log_hi.exp()).collect())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSettings {
    pub schedule: RankSchedule,
    pub layers: usize,
}

/// A fully resolved experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub trials: usize,
    pub dims: Dims,
    pub spectrum: SpectrumShape,
    pub eps_grid: Vec<f64>,
    pub schedule: ScheduleSettings,
    pub paper_scale: bool,
    pub out_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    version: Option<u32>,
    experiment: String,
    seed: Option<u64>,
    trials: Option<usize>,
    out_dir: Option<PathBuf>,
    paper_scale: Option<bool>,
    eps_grid: Option<Vec<f64>>,
    dims: Option<RawDims>,
    spectrum: Option<RawSpectrum>,
    schedule: Option<RawSchedule>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDims {
    d: Option<usize>,
    l: Option<usize>,
    n: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpectrum {
    log_hi: Option<f64>,
    log_lo: Option<f64>,
    rate: Option<f64>,
    count: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    d_tilde_0: Option<f64>,
    alpha: Option<f64>,
    layers: Option<usize>,
}

fn config_err(e: impl fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    /// Desk-scale defaults, or the larger reference sizes with `paper_scale`.
    pub fn defaults(id: ExperimentId, paper_scale: bool) -> Self {
        let range = |lo: f64| SpectrumShape { log_hi: 0.0, decay: Decay::Range { log_lo: lo }, count: None };
        let rate = |r: f64| SpectrumShape { log_hi: 0.0, decay: Decay::Rate { rate: r }, count: None };
        let (dims, spectrum, trials) = match id {
            ExperimentId::CompressSlope if paper_scale => (Dims { d: 512, l: 4096, n: 4096 }, range(-5.0), 10),
            ExperimentId::CompressSlope => (Dims { d: 128, l: 512, n: 512 }, range(-5.0), 10),
            ExperimentId::DimensionSlope if paper_scale => (Dims { d: 512, l: 4096, n: 4096 }, rate(0.1), 10),
            ExperimentId::DimensionSlope => (Dims { d: 256, l: 512, n: 512 }, rate(0.1), 10),
            ExperimentId::SketchHeads if paper_scale => (Dims { d: 2048, l: 4096, n: 4096 }, rate(0.05), 20),
            ExperimentId::SketchHeads => (Dims { d: 256, l: 512, n: 512 }, rate(0.05), 20),
            ExperimentId::FlowHeads => (Dims { d: 64, l: 128, n: 128 }, rate(0.5), 50),
            ExperimentId::EmbeddingDecay => (Dims { d: 64, l: 512, n: 512 }, rate(0.5), 50),
            ExperimentId::ScheduleDemo => (Dims { d: 64, l: 64, n: 64 }, rate(0.5), 1),
        };
        let schedule = RankSchedule::new(3.0, 0.27).expect("default schedule is valid");
        ExperimentConfig {
            experiment: id,
            seed: 0,
            trials,
            dims,
            spectrum,
            eps_grid: vec![1e-3],
            schedule: ScheduleSettings { schedule, layers: 12 },
            paper_scale,
            out_dir: PathBuf::from("results"),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, false)
    }

    /// Parses a config; `force_paper_scale` switches to the paper-scale
    /// defaults even when the document does not ask for them.
    pub fn from_toml_with(text: &str, force_paper_scale: bool) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(config_err)?;
        if let Some(v) = raw.version {
            if v != CONFIG_VERSION {
                return Err(Error::Config(format!("unsupported config version {v}, expected {CONFIG_VERSION}")));
            }
        }
        let id: ExperimentId = raw.experiment.parse()?;
        let paper_scale = force_paper_scale || raw.paper_scale.unwrap_or(false);
        let mut cfg = Self::defaults(id, paper_scale);
        if let Some(s) = raw.seed {
            cfg.seed = s;
        }
        if let Some(t) = raw.trials {
            cfg.trials = t;
        }
        if let Some(o) = raw.out_dir {
            cfg.out_dir = o;
        }
        if let Some(e) = raw.eps_grid {
            cfg.eps_grid = e;
        }
        let dims = raw.dims.unwrap_or_default();
        cfg.dims.d = dims.d.unwrap_or(cfg.dims.d);
        cfg.dims.l = dims.l.unwrap_or(cfg.dims.l);
        cfg.dims.n = dims.n.unwrap_or(cfg.dims.n);
        if let Some(s) = raw.spectrum {
            if let Some(hi) = s.log_hi {
                cfg.spectrum.log_hi = hi;
            }
            cfg.spectrum.decay = match (s.log_lo, s.rate) {
                (Some(_), Some(_)) => return Err(Error::Config("spectrum takes log_lo or rate, not both".into())),
                (Some(log_lo), None) => Decay::Range { log_lo },
                (None, Some(rate)) => Decay::Rate { rate },
                (None, None) => cfg.spectrum.decay,
            };
            if s.count.is_some() {
                cfg.spectrum.count = s.count;
            }
        }
        if let Some(s) = raw.schedule {
            let d0 = s.d_tilde_0.unwrap_or(cfg.schedule.schedule.d_tilde_0());
            let alpha = s.alpha.unwrap_or(cfg.schedule.schedule.alpha());
            cfg.schedule.schedule = RankSchedule::new(d0, alpha).map_err(config_err)?;
            cfg.schedule.layers = s.layers.unwrap_or(cfg.schedule.layers);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(path, false)
    }

    pub fn load_with(path: &Path, force_paper_scale: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with(&text, force_paper_scale)
    }

    pub fn validate(&self) -> Result<()> {
        let Dims { d, l, n } = self.dims;
        if d == 0 || l == 0 || n == 0 {
            return Err(Error::Config(format!("dims must be positive, got d = {d}, l = {l}, n = {n}")));
        }
        if self.spectrum.count == Some(0) {
            return Err(Error::Config("spectrum count must be positive".into()));
        }
        if !self.spectrum.log_hi.is_finite() {
            return Err(Error::Config("spectrum log_hi must be finite".into()));
        }
        match self.spectrum.decay {
            Decay::Range { log_lo } if !(log_lo.is_finite() && log_lo <= self.spectrum.log_hi) => {
                return Err(Error::Config(format!("spectrum log_lo = {log_lo} must be finite and <= log_hi")));
            }
            Decay::Rate { rate } if !(rate.is_finite() && rate >= 0.0) => {
                return Err(Error::Config(format!("spectrum rate = {rate} must be finite and nonnegative")));
            }
            _ => {}
        }
        if self.eps_grid.is_empty() {
            return Err(Error::Config("eps_grid must be non-empty".into()));
        }
        if !self.eps_grid.iter().all(|&e| e > 0.0 && e.is_finite()) {
            return Err(Error::Config("eps_grid values must be positive".into()));
        }
        if !self.eps_grid.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::Config("eps_grid must be strictly descending".into()));
        }
        if self.schedule.layers == 0 {
            return Err(Error::Config("schedule layers must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of everything that affects the
    /// results (the output directory is excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg = ExperimentConfig::from_toml(r#"experiment = "compress-slope""#).unwrap();
        assert_eq!(cfg, ExperimentConfig::defaults(ExperimentId::CompressSlope, false));
        assert_eq!(cfg.dims, Dims { d: 128, l: 512, n: 512 });
    }

    #[test]
    fn overrides_apply() {
        let text = r#"
            experiment = "sketch-heads"
            seed = 11
            trials = 3
            eps_grid = [1e-2, 1e-4]
            [dims]
            d = 64
            [spectrum]
            rate = 0.2
            count = 32
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!((cfg.seed, cfg.trials, cfg.dims.d, cfg.dims.l), (11, 3, 64, 512));
        assert_eq!(cfg.spectrum.decay, Decay::Rate { rate: 0.2 });
        assert_eq!(cfg.spectrum.build(cfg.dims.d).unwrap().len(), 32);
    }

    #[test]
    fn rejects_bad_documents() {
        let bad = [
            r#"experiment = "nope""#,
            "experiment = \"flow-heads\"\ncolour = 1",
            "experiment = \"flow-heads\"\nversion = 2",
            "experiment = \"flow-heads\"\neps_grid = [1e-4, 1e-2]",
            "experiment = \"flow-heads\"\n[dims]\nd = 0",
            "experiment = \"flow-heads\"\n[spectrum]\nlog_lo = -1.0\nrate = 0.1",
            "experiment = \"flow-heads\"\n[dims]\nw = 3",
            "seed = 1",
        ];
        for text in bad {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "accepted {text:?}");
        }
    }

    #[test]
    fn paper_scale_switches_defaults() {
        let cfg = ExperimentConfig::from_toml_with(r#"experiment = "sketch-heads""#, true).unwrap();
        assert_eq!((cfg.dims.d, cfg.dims.l), (2048, 4096));
        let cfg = ExperimentConfig::from_toml("experiment = \"compress-slope\"\npaper_scale = true").unwrap();
        assert_eq!((cfg.dims.d, cfg.dims.n), (512, 4096));
    }

    #[test]
    fn hash_tracks_results_not_output_location() {
        let a = ExperimentConfig::defaults(ExperimentId::FlowHeads, false);
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn spectrum_shapes() {
        let s = SpectrumShape { log_hi: 0.0, decay: Decay::Range { log_lo: -5.0 }, count: None }.build(6).unwrap();
        assert!((s.values()[5] - (-5.0f64).exp()).abs() < 1e-15);
        let s = SpectrumShape { log_hi: 0.0, decay: Decay::Rate { rate: 0.1 }, count: None }.build(40).unwrap();
        assert!((s.values()[10] - (-1.0f64).exp()).abs() < 1e-15);
    }
}
