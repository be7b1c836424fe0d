mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "summit", version, about = "Single-stage image restoration: data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic paired dataset (`input/`, `target/`, `spec.txt`).
    Synth,
    /// Train on a dataset; the run directory receives `config.txt`, `train.log` and `checkpoint.bin`.
    Train,
    /// Score a checkpoint on a dataset; writes `metrics.csv` and `summary.txt`.
    Eval,
    /// Restore one PNG or every PNG in a directory.
    Restore,
    /// Print parameter count and compute cost.
    Inspect {
        /// Square input resolution for the cost estimate.
        #[arg(long, default_value_t = 256)]
        resolution: usize,
    },
}

/// Settings shared by every subcommand. Precedence: defaults < `--config` < `--set` < named flags.
#[derive(Args, Debug, Default)]
pub struct Flags {
    /// `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base channel width (`32`, `64` or any even number); `custom` keeps the config value.
    #[arg(long, global = true)]
    pub width: Option<String>,
    #[arg(long, global = true, value_parser = ["baseline", "ffm", "mhamb", "full"])]
    pub ablation: Option<String>,
    /// Use local-window statistics in channel attention at evaluation time.
    #[arg(long, global = true)]
    pub tlc: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Image file or directory to restore.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Any config key, e.g. `--set noise_sigma=0.02`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = settings::resolve(&cli.flags).and_then(|s| match cli.command {
        Command::Synth => commands::synth(&s),
        Command::Train => commands::train(&s),
        Command::Eval => commands::eval(&s),
        Command::Restore => commands::restore(&s),
        Command::Inspect { resolution } => commands::inspect(&s, resolution),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
