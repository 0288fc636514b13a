use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use poirec::commands;
use poirec::config::{Overrides, RunConfig};
use poirec::CliError;

#[derive(Debug, Parser)]
#[command(name = "poirec", version, about = "Next-POI recommendation with recency-aware popularity")]
struct Cli {
    /// Flat TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "F")]
    alpha: Option<f64>,
    #[arg(long, global = true, value_name = "F")]
    beta: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    epochs: Option<usize>,
    /// Output directory for all artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse, filter, segment and split a check-in log into a bundle.
    Preprocess {
        /// Check-in log; overrides `dataset_path`.
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
    },
    /// Write per-POI popularity counts and scores.
    PopularityReport,
    /// Train a model and write a checkpoint.
    Train,
    /// Score the test split with a checkpoint.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate one model per alpha/beta grid cell plus a baseline.
    Sweep,
    /// Write a seeded synthetic check-in log.
    Synthesize {
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        #[arg(long, default_value_t = 300)]
        trajectories: usize,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    let dataset_path = match &cli.command {
        Command::Preprocess { dataset } => dataset.clone(),
        _ => None,
    };
    let overrides = Overrides {
        seed: cli.seed,
        alpha: cli.alpha,
        beta: cli.beta,
        epochs: cli.epochs,
        output_dir: cli.out.clone(),
        dataset_path,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::Preprocess { .. } => commands::preprocess(&cfg),
        Command::PopularityReport => commands::popularity_report(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Evaluate { checkpoint } => commands::evaluate_cmd(&cfg, checkpoint.as_deref()),
        Command::Sweep => commands::sweep_cmd(&cfg),
        Command::Synthesize { output, trajectories } => commands::synthesize(output, *trajectories, cfg.seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(text) => {
            let _ = std::io::stdout().write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
