use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tlscm_cli::{cmd_benchmark, cmd_evaluate, cmd_fit, cmd_generate, CliError, Overrides, RunConfig};

/// Simulate, fit and evaluate temporal causal models with latent confounders.
#[derive(Parser)]
#[command(name = "tlscm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log progress at debug level.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed(s) in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw ground truths and datasets.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a dataset and write a checkpoint.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV; falls back to `fit.dataset`.
        dataset: Option<PathBuf>,
    },
    /// Score a checkpoint against a ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        checkpoint: Option<PathBuf>,
        truth: Option<PathBuf>,
        /// Edge-probability threshold; falls back to `evaluate.threshold`.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Sweep a parameter grid over several seeds.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Grid runs executed in parallel.
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn overrides(c: &Common, workers: Option<usize>) -> Overrides {
    Overrides {
        seed: c.seed,
        out: c.out.clone(),
        workers,
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = RunConfig::load(&common.config)?;
            for p in cmd_generate(&cfg, &overrides(&common, None))? {
                println!("{}", p.display());
            }
        }
        Command::Fit { common, dataset } => {
            let cfg = RunConfig::load(&common.config)?;
            let out = cmd_fit(&cfg, dataset.as_deref(), &overrides(&common, None))?;
            println!("{}", out.display());
        }
        Command::Evaluate {
            common,
            checkpoint,
            truth,
            threshold,
        } => {
            let cfg = RunConfig::load(&common.config)?;
            let ov = overrides(&common, None);
            let out = cmd_evaluate(&cfg, checkpoint.as_deref(), truth.as_deref(), threshold, &ov)?;
            println!("{}", out.display());
        }
        Command::Benchmark { common, workers } => {
            let cfg = RunConfig::load(&common.config)?;
            let out = cmd_benchmark(&cfg, &overrides(&common, workers))?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
