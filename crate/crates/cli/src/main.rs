use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fairicl_core::pipeline::{
    cmd_baseline, cmd_fcg, cmd_perturbation, cmd_report, cmd_split, cmd_strategy_sweep, BackendKind, Experiment,
    ExperimentConfig, FcgMode, RunResult,
};
use fairicl_core::synth::{write_adult, write_credit};

/// Fairness-aware demonstration selection for in-context learning on tabular data.
#[derive(Parser)]
#[command(name = "fairicl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override the configured backend.
    #[arg(long, value_enum)]
    backend: Option<BackendChoice>,
    /// Use this single seed for every selection step.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Render prompts without calling the model.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendChoice {
    Mock,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataset {
    Adult,
    Credit,
}

#[derive(Subcommand)]
enum Command {
    /// Split the data and write the balanced dev/test samples.
    Split(Common),
    /// Zero-shot predictions.
    Baseline(Common),
    /// Random selection under each configured strategy and seed.
    Sweep(Common),
    /// Minority-only / majority-only sets and their label or group flips.
    Perturb(Common),
    /// Clustered search for fair demonstrations, then evaluate the top picks.
    Fcg {
        #[command(flatten)]
        common: Common,
        /// Compare random and partially searched sets instead of the grid.
        #[arg(long)]
        ablation: bool,
    },
    /// Rebuild the tables of all finished commands in an output directory.
    Report {
        /// Output directory holding per-command results.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded synthetic dataset in the raw Adult or Credit layout.
    Synth {
        #[arg(long, value_enum)]
        dataset: Dataset,
        #[arg(long, default_value_t = 12000)]
        rows: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

fn experiment(common: &Common) -> Result<Experiment> {
    let mut loaded = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        loaded.config.override_seed(seed);
    }
    if let Some(b) = common.backend {
        loaded.config.backend.kind = match b {
            BackendChoice::Mock => BackendKind::Mock,
            BackendChoice::Remote => BackendKind::Remote,
        };
    }
    if let Some(out) = &common.out {
        loaded.config.output_dir = std::path::absolute(out)?;
    }
    Experiment::prepare(&loaded).with_context(|| format!("preparing {}", common.config.display()))
}

fn show(exp: &Experiment, command: &str, result: Option<RunResult>) -> Result<()> {
    let dir = exp.command_dir(command);
    match result {
        None => println!("dry run: prompts written to {}", dir.join("prompts.jsonl").display()),
        Some(r) => {
            print!("{}", std::fs::read_to_string(dir.join("tables.txt"))?);
            let cache = r.cache_totals();
            println!(
                "cache: {} hits, {} misses; results in {}",
                cache.hits,
                cache.misses,
                dir.display()
            );
            if !r.failures.is_empty() && r.runs.is_empty() {
                bail!("every condition failed");
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split(c) => {
            let exp = experiment(&c)?;
            print!("{}", cmd_split(&exp)?);
        }
        Command::Baseline(c) => {
            let exp = experiment(&c)?;
            show(&exp, "baseline", cmd_baseline(&exp, c.dry_run)?)?;
        }
        Command::Sweep(c) => {
            let exp = experiment(&c)?;
            show(&exp, "sweep", cmd_strategy_sweep(&exp, c.dry_run)?)?;
        }
        Command::Perturb(c) => {
            let exp = experiment(&c)?;
            show(&exp, "perturb", cmd_perturbation(&exp, c.dry_run)?)?;
        }
        Command::Fcg { common, ablation } => {
            let exp = experiment(&common)?;
            let (mode, name) = if ablation {
                (FcgMode::Ablation, "fcg-ablation")
            } else {
                (FcgMode::Grid, "fcg")
            };
            let result = cmd_fcg(&exp, mode, common.dry_run)?;
            if result.is_none() {
                println!(
                    "dry run: pool and zero-shot dev prompts written to {}",
                    exp.command_dir(name).display()
                );
                return Ok(());
            }
            show(&exp, name, result)?;
        }
        Command::Report { out } => print!("{}", cmd_report(&out)?),
        Command::Synth {
            dataset,
            rows,
            seed,
            output,
        } => {
            if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            let file = BufWriter::new(File::create(&output).with_context(|| output.display().to_string())?);
            match dataset {
                Dataset::Adult => write_adult(file, rows, seed)?,
                Dataset::Credit => write_credit(file, rows, seed)?,
            }
            println!("wrote {rows} rows to {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
