//! Command-line harness: simulate trajectories, estimate block statistics,
//! verify tail bounds against Monte Carlo, calibrate constants, and run the
//! built-in experiments.
//!
//! Exit codes: 0 on success, 1 on validation or configuration errors, 2 when
//! a verify-bound run finds a non-vacuous grid point where the bound fails
//! to dominate (so CI can gate on the theorem checks).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use regenbound::config::ExperimentConfig;
use regenbound::harness::{
    calibrate_constant, run_bounded_difference_experiment, run_estimate,
    run_lognecessity_experiment, run_tail_experiment, simulate_dump,
};
use regenbound::report::to_json_pretty;

#[derive(Parser)]
#[command(name = "regenbound", version, about = "Seeded Monte Carlo verification of concentration bounds for empirical processes and regenerating Markov chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's replication count.
    #[arg(long)]
    reps: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = rayon default).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Dump one split-chain trajectory as CSV (step, state, flag).
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the trajectory length.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Regeneration block statistics (JSON report keyed by function name).
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Tail experiment: Monte Carlo exceedance estimates against the
    /// config's bound; exits 2 if domination fails at a non-vacuous point.
    VerifyBound {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Also write the catalog-style curve CSV here.
        #[arg(long)]
        curve_out: Option<PathBuf>,
    },
    /// Smallest constant on the search grid whose bound dominates a training
    /// batch; prints a JSON report.
    Calibrate {
        #[command(flatten)]
        common: CommonArgs,
        /// Training grid (comma separated); defaults to the config t_grid.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Built-in experiments.
    Experiment {
        #[command(subcommand)]
        which: ExperimentCmd,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Heavy-atom lower-bound experiment: symmetrization floors plus the
    /// hypothetical log-power curves.
    LogNecessity {
        /// Comma-separated list of r values.
        #[arg(long, default_value = "6,8,10")]
        r: String,
        #[arg(long, default_value_t = 100_000)]
        reps: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Log-power exponents to evaluate at the reference constant.
        #[arg(long, default_value = "1.0,0.5")]
        betas: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Bounded-difference experiment for a symmetric Hamming-Lipschitz path
    /// statistic (built-in: distinct_states).
    BoundedDifference {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)
                        .with_context(|| format!("creating {}", dir.display()))?;
                }
            }
            std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<(ExperimentConfig, Option<PathBuf>)> {
    let mut cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(reps) = common.reps {
        cfg.experiment.reps = reps;
    }
    let base_dir = common.config.parent().map(Path::to_path_buf);
    Ok((cfg, base_dir))
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow::anyhow!("bad {what} entry '{s}': {e}")))
        .collect()
}

fn run() -> Result<u8> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { common, n } => {
            let (mut cfg, base_dir) = load_config(&common)?;
            if let Some(n) = n {
                cfg.experiment.n = n;
            }
            let csv = simulate_dump(&cfg, base_dir.as_deref())?;
            emit(&common.out, &csv)?;
            Ok(0)
        }
        Command::Estimate { common } => {
            let (cfg, base_dir) = load_config(&common)?;
            let report = run_estimate(&cfg, base_dir.as_deref(), common.threads)?;
            emit(&common.out, &to_json_pretty(&report))?;
            Ok(0)
        }
        Command::VerifyBound { common, format, curve_out } => {
            let (cfg, base_dir) = load_config(&common)?;
            let report = run_tail_experiment(&cfg, base_dir.as_deref(), common.threads)?;
            let content = match format {
                Format::Csv => report.to_csv(),
                Format::Json => to_json_pretty(&report),
            };
            emit(&common.out, &content)?;
            if let Some(curve_path) = &curve_out {
                emit(&Some(curve_path.clone()), &report.to_curve_csv())?;
            }
            eprintln!(
                "{}: {} ({} grid points, {} ms)",
                report.experiment_id,
                if report.all_dominated { "dominated" } else { "DOMINATION FAILED" },
                report.rows.len(),
                report.wall_time_ms
            );
            Ok(if report.all_dominated { 0 } else { 2 })
        }
        Command::Calibrate { common, grid } => {
            let (cfg, base_dir) = load_config(&common)?;
            let grid: Vec<f64> = match grid {
                Some(text) => parse_list(&text, "grid")?,
                None => cfg.experiment.t_grid.clone(),
            };
            let budget = common.reps.unwrap_or(cfg.experiment.reps);
            let seed = common.seed.unwrap_or(cfg.experiment.seed);
            let report = calibrate_constant(&cfg, base_dir.as_deref(), &grid, budget, seed, common.threads)?;
            emit(&common.out, &to_json_pretty(&report))?;
            Ok(0)
        }
        Command::Experiment { which } => match which {
            ExperimentCmd::LogNecessity { r, reps, seed, betas, out, format, threads } => {
                let rs: Vec<u64> = parse_list(&r, "r")?;
                let betas: Vec<f64> = parse_list(&betas, "betas")?;
                let report = run_lognecessity_experiment(&rs, &betas, reps, seed, threads)?;
                let content = match format {
                    Format::Csv => report.to_csv(),
                    Format::Json => to_json_pretty(&report),
                };
                emit(&out, &content)?;
                Ok(0)
            }
            ExperimentCmd::BoundedDifference { common, format } => {
                let (cfg, base_dir) = load_config(&common)?;
                let report = run_bounded_difference_experiment(&cfg, base_dir.as_deref(), common.threads)?;
                let content = match format {
                    Format::Csv => report.to_csv(),
                    Format::Json => to_json_pretty(&report),
                };
                emit(&common.out, &content)?;
                Ok(if report.all_dominated { 0 } else { 2 })
            }
        },
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
