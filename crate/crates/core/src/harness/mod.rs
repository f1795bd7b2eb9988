//! Config-driven experiment runner: seeded trials, CSV tables with
//! provenance, SVG line plots and log-log slope fits.

mod config;
mod experiments;
mod fit;
mod plot;
mod table;

use std::path::{Path, PathBuf};

pub use config::{Decay, Dims, ExperimentConfig, ExperimentId, ScheduleSettings, SpectrumShape, CONFIG_VERSION};
pub use experiments::{
    compress_ranks, dimension_sweep, CHEBYSHEV_RANK, COMPRESS_POINTS, COMPRESS_QK_STD, FLOW_HEADS, SKETCH_HEADS,
    SKETCH_RANK,
};
pub use fit::{fit_loglog_slope, LogLogFit};
pub use plot::{emit_svg_lineplot, render_svg, LinePlot};
pub use table::{emit_csv, format_f64, Cell, Provenance, ResultTable};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

impl Metric {
    pub fn new(name: &str, value: f64) -> Self {
        Self { name: name.into(), value }
    }
}

/// Everything an experiment produced.
#[derive(Clone, Debug)]
pub struct ExperimentRun {
    pub config: ExperimentConfig,
    pub tables: Vec<ResultTable>,
    pub plots: Vec<Option<LinePlot>>,
    pub metrics: Vec<Metric>,
    /// Bound violations found by a verification experiment.
    pub violations: Vec<String>,
    /// Files written by [`run_experiment`].
    pub files: Vec<PathBuf>,
}

impl ExperimentRun {
    fn new(cfg: &ExperimentConfig, outputs: Vec<(ResultTable, Option<LinePlot>)>, metrics: Vec<Metric>) -> Self {
        let (tables, plots) = outputs.into_iter().unzip();
        Self { config: cfg.clone(), tables, plots, metrics, violations: Vec::new(), files: Vec::new() }
    }

    pub fn table(&self, name: &str) -> Option<&ResultTable> {
        self.tables.iter().find(|t| t.provenance.table == name)
    }

    /// The table named after the experiment.
    pub fn main_table(&self) -> &ResultTable {
        &self.tables[0]
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }
}

/// Runs an experiment in memory.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    experiments::evaluate(cfg)
}

/// Runs an experiment and writes `<table>.csv` and `<table>.svg` for every
/// table into the configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let mut run = evaluate(cfg)?;
    run.files = write_outputs(&run, &cfg.out_dir)?;
    Ok(run)
}

pub fn write_outputs(run: &ExperimentRun, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for (table, plot) in run.tables.iter().zip(&run.plots) {
        let csv = dir.join(format!("{}.csv", table.provenance.table));
        emit_csv(table, &csv)?;
        files.push(csv);
        if let Some(plot) = plot {
            let svg = dir.join(format!("{}.svg", table.provenance.table));
            emit_svg_lineplot(table, plot, &svg)?;
            files.push(svg);
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(id: ExperimentId) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::defaults(id, false);
        cfg.trials = 2;
        cfg
    }

    #[test]
    fn zero_trials_give_header_only_tables() {
        for id in ExperimentId::ALL {
            let mut cfg = small(id);
            cfg.trials = 0;
            let run = evaluate(&cfg).unwrap();
            assert!(run.tables.iter().all(ResultTable::is_empty), "{id}");
            let cols: Vec<&str> = run.main_table().columns().iter().map(String::as_str).collect();
            assert_eq!(cols, id.columns());
        }
    }

    #[test]
    fn schedule_demo_counts() {
        let run = evaluate(&small(ExperimentId::ScheduleDemo)).unwrap();
        let t = run.main_table();
        assert_eq!(t.column_f64("rank").unwrap(), [3., 4., 5., 5., 5., 5., 6., 6., 6., 6., 6., 6.]);
        assert_eq!(t.column_f64("params").unwrap()[0], (3 * 2 * 3 * 64) as f64);
    }

    #[test]
    fn writes_files_and_reports_bad_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(ExperimentId::ScheduleDemo);
        cfg.out_dir = dir.path().join("out");
        let run = run_experiment(&cfg).unwrap();
        assert_eq!(run.files.len(), 2);
        assert!(run.files.iter().all(|f| f.exists()));
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        cfg.out_dir = blocker.join("sub");
        match run_experiment(&cfg) {
            Err(Error::Io { path, .. }) => assert!(path.starts_with(&blocker)),
            other => panic!("expected an I/O error, got {other:?}"),
        }
    }
}
