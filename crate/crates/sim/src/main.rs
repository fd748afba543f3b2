use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairfed_sim::config::{ConfigError, ExperimentConfig};
use fairfed_sim::harness::{self, RunOptions};
use fairfed_sim::diagnose;

#[derive(Parser)]
#[command(name = "fairfed", version, about = "Federated optimization experiments")]
struct Cli {
    /// Output directory (default: runs/<config name>)
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Only log warnings and errors
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment for every configured seed
    Run { config: PathBuf },
    /// Run AdaFedAdam for each alpha and write the trade-off table
    SweepAlpha {
        config: PathBuf,
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
    },
    /// Write per-client label histograms and sizes
    PartitionReport { config: PathBuf },
    /// Write accumulated-Adam and certainty diagnostics
    Diagnose { config: PathBuf },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_DIVERGED: u8 = 3;

fn load(path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed_override {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let opts = RunOptions { quiet: cli.quiet };
    let config_path = match &cli.command {
        Command::Run { config }
        | Command::SweepAlpha { config, .. }
        | Command::PartitionReport { config }
        | Command::Diagnose { config } => config.clone(),
    };
    let cfg = load(&config_path, cli.seed_override)?;
    let out = cli.out_dir.unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    match cli.command {
        Command::Run { .. } => {
            let summary = harness::run_experiment(&cfg, Some(&out), opts)?;
            if let Some(a) = &summary.across_seeds.avg_acc {
                println!("{}: final avg acc {:.4} ± {:.4} over {} seeds", summary.algorithm, a.mean, a.std, summary.across_seeds.completed_seeds);
            }
            println!("artifacts in {}", out.display());
            if summary.all_diverged() {
                eprintln!("every seed diverged");
                return Ok(ExitCode::from(EXIT_ALL_DIVERGED));
            }
        }
        Command::SweepAlpha { alphas, .. } => {
            let sweep = harness::sweep_alpha(&cfg, &alphas, Some(&out), opts)?;
            if sweep.runs.is_empty() {
                eprintln!("every seed diverged for every alpha");
                return Ok(ExitCode::from(EXIT_ALL_DIVERGED));
            }
            for p in &sweep.front.points {
                println!("alpha {}: avg error {:.4}, rsd {:.4}{}", p.alpha, p.avg_error, p.rsd, if p.dominated { "" } else { " (front)" });
            }
            println!("sweep table in {}", out.join("sweep.csv").display());
        }
        Command::PartitionReport { .. } => {
            let rows = harness::partition_report(&cfg, cfg.seeds[0], Some(&out))?;
            let max_tv = rows.iter().map(|r| r.tv_to_pool).fold(0.0, f64::max);
            println!("{} clients, max label TV to pool {:.4}", rows.len(), max_tv);
            println!("report in {}", out.join("partition.csv").display());
        }
        Command::Diagnose { .. } => {
            let d = diagnose::diagnose(&cfg, Some(&out), cli.quiet)?;
            for r in &d.speedups {
                match (r.steps_to_target, r.speedup) {
                    (Some(s), Some(x)) => println!("N={}: {s} adam steps to target, speedup {x:.3}", r.n),
                    _ => println!("N={}: target not reached", r.n),
                }
            }
            println!("diagnostics in {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<ConfigError>()) {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
