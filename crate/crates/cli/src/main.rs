use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use lowrank_core::harness::{format_f64, run_experiment, ExperimentConfig, ExperimentId};

/// Seeded low-rank attention experiments.
#[derive(Parser, Debug)]
#[command(name = "lowrank", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Use the larger reference dimensions where an experiment has them.
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// List the experiment ids.
    ListExperiments,
    /// Check a config file and print its resolved form.
    Validate { config: PathBuf },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_VIOLATION: u8 = 2;

fn load(cli: &Cli, path: &Path) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::load_with(path, cli.paper_scale).map_err(|e| e.to_string())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match &cli.command {
        Command::ListExperiments => {
            for id in ExperimentId::ALL {
                println!("{:<16} {}", id.name(), id.description());
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&cli, config) {
            Ok(cfg) => {
                println!("{}: ok", config.display());
                println!("experiment  {}", cfg.experiment);
                println!("seed        {}", cfg.seed);
                println!("trials      {}", cfg.trials);
                println!("dims        d={} l={} n={}", cfg.dims.d, cfg.dims.l, cfg.dims.n);
                println!("out_dir     {}", cfg.out_dir.display());
                println!("config_hash {}", cfg.hash());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Run { config } => {
            let cfg = match load(&cli, config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let start = Instant::now();
            let run = match run_experiment(&cfg) {
                Ok(run) => run,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            println!("{} (seed {}, {} trials) in {:.1?}", cfg.experiment, cfg.seed, cfg.trials, start.elapsed());
            for m in &run.metrics {
                println!("  {:<28} {}", m.name, format_f64(m.value));
            }
            for f in &run.files {
                println!("  wrote {}", f.display());
            }
            if run.violations.is_empty() {
                ExitCode::SUCCESS
            } else {
                for v in &run.violations {
                    eprintln!("violation: {v}");
                }
                eprintln!("{} bound violations", run.violations.len());
                ExitCode::from(EXIT_VIOLATION)
            }
        }
    }
}
