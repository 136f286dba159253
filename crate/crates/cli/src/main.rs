use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use coldpost_cli::run::{planned_chains, MANIFEST_FILE};
use coldpost_cli::{default_temperature_grid, emit_report, run_experiment, ExperimentConfig, RunManifest, RunOptions};

/// Default output directory when neither `--out` nor the config sets one.
const OUT_DIR_ENV: &str = "COLDPOST_OUT_DIR";

#[derive(Parser)]
#[command(name = "coldpost", version, about = "Cold posterior sweeps over small Bayesian MLPs")]
struct Cli {
    /// Worker threads for parallel chains
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (overrides the config and $COLDPOST_OUT_DIR)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Added to every seed in the config
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) the sweep described by a config file
    Run { config: PathBuf },
    /// Print the default temperature grid
    Grid {
        #[arg(long)]
        json: bool,
    },
    /// Summarise a finished run from its manifest (file or output directory)
    Report { manifest: PathBuf },
    /// Check a config file without running anything
    Validate { config: PathBuf },
}

fn load_config(path: &Path, offset: u64) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::from_path(path)?.with_seed_offset(offset))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config, cli.seed_offset)?;
            let out_dir = cli
                .out
                .or_else(|| cfg.out_dir.clone())
                .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("coldpost-out"));
            let outcome = run_experiment(
                &cfg,
                &RunOptions {
                    out_dir: out_dir.clone(),
                    workers: cli.workers,
                },
            )?;
            println!("{}", emit_report(&outcome.manifest)?);
            println!("{} new chains, results in {}", outcome.new_chains, out_dir.display());
            let failures = outcome.manifest.failures();
            if failures > 0 {
                eprintln!("{failures} chains diverged or failed");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Grid { json } => {
            let grid = default_temperature_grid();
            if json {
                println!("{}", serde_json::to_string(&grid)?);
            } else {
                for t in grid {
                    println!("{t}");
                }
            }
        }
        Command::Report { manifest } => {
            let path = if manifest.is_dir() {
                manifest.join(MANIFEST_FILE)
            } else {
                manifest
            };
            print!("{}", emit_report(&RunManifest::load(&path)?)?);
        }
        Command::Validate { config } => {
            let cfg = load_config(&config, cli.seed_offset)?;
            cfg.validate()?;
            println!(
                "ok: {:?}, {} chains, checksum {}",
                cfg.kind,
                planned_chains(&cfg),
                cfg.checksum()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
