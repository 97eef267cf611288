use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use selsa::config::ExperimentConfig;
use selsa::runner::{cmd_all, cmd_eval, cmd_generate, cmd_spectral, cmd_train, RunOptions};
use selsa::Result;

/// Synthetic video detection experiments with sequence-level feature aggregation.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    /// JSON experiment config; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed, overriding the seeds in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Add the Seq-NMS rows to the evaluation table.
    #[arg(long, global = true)]
    seq_nms: bool,
    /// Write one x,y CSV per evaluation curve.
    #[arg(long, global = true)]
    plot_data: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the training and evaluation datasets as CSV.
    Generate,
    /// Train one checkpoint per aggregation mode.
    Train,
    /// Evaluate the stored checkpoints.
    Eval,
    /// Cluster-risk report of the trained similarity.
    Spectral,
    /// All stages in order.
    All,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if let Some(out) = cli.out {
        config.output_dir = out;
    }
    let config = config.resolved();
    config.validate()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(selsa::SelsaError::Config(
                "--threads: must be positive".into(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| selsa::SelsaError::Config(format!("--threads: {e}")))?;
    }
    let options = RunOptions {
        with_seq_nms: cli.seq_nms,
        plot_data: cli.plot_data,
    };
    match cli.command {
        Command::Generate => cmd_generate(&config).map(drop),
        Command::Train => cmd_train(&config).map(drop),
        Command::Eval => cmd_eval(&config, options).map(drop),
        Command::Spectral => cmd_spectral(&config).map(drop),
        Command::All => cmd_all(&config, options),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
