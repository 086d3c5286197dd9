//! `bilearn` command-line tool.

mod convert;
mod detect;
mod output;
mod report;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use output::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "bilearn",
    version,
    about = "Noisy-label training with bidirectional learning and sample reweighting"
)]
struct Cli {
    /// Seed for the run (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory to write or read.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Config override as dotted `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a run directory.
    Train {
        /// Preset name or path to a TOML config.
        #[arg(long)]
        config: String,
        /// Override the number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue an interrupted run from its last checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs, leaving a resumable run.
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Flag samples whose negative-head probability on their label is below `h`.
    Detect {
        #[arg(long, default_value_t = bilearn::reweight::DEFAULT_THRESHOLD)]
        h: f64,
    },
    /// Detection precision/recall/F1 over a grid of thresholds.
    Sweep {
        #[arg(long, default_value_t = 0.05)]
        h_min: f64,
        #[arg(long, default_value_t = 0.95)]
        h_max: f64,
        #[arg(long, default_value_t = 19)]
        steps: usize,
    },
    /// Probability histogram, training curves and a markdown summary.
    Report,
    /// Convert a CSV or JSON label export into a noisy-label sidecar.
    ConvertSidecar(convert::Args),
    /// List the built-in config presets.
    Presets,
}

fn run_dir(cli: &Cli) -> Result<PathBuf, Failure> {
    cli.run_dir
        .clone()
        .ok_or_else(|| Failure::usage("--run-dir is required for this command"))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let overrides = cli
        .set
        .iter()
        .map(|s| bilearn::train::parse_override(s))
        .collect::<bilearn::Result<Vec<_>>>()?;
    match &cli.command {
        Command::Train {
            config,
            epochs,
            resume,
            stop_after,
        } => train::cmd_train(&train::TrainArgs {
            config,
            epochs: *epochs,
            seed: cli.seed,
            overrides,
            run_dir: cli.run_dir.clone(),
            force: cli.force,
            resume: *resume,
            stop_after: *stop_after,
        }),
        Command::Detect { h } => detect::cmd_detect(&run_dir(&cli)?, *h, cli.force),
        Command::Sweep { h_min, h_max, steps } => detect::cmd_sweep(&run_dir(&cli)?, *h_min, *h_max, *steps, cli.force),
        Command::Report => report::cmd_report(&run_dir(&cli)?, cli.force),
        Command::ConvertSidecar(args) => convert::cmd_convert(args, cli.force),
        Command::Presets => {
            for (name, _) in bilearn::train::PRESETS {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
