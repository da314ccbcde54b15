//! `twindrop` command-line driver.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use twindrop::twin::DropoutMode;

use crate::commands::Suite;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "twindrop", version, about = "Twin-network effect estimation with factorized MC Dropout uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to anything not set.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Total,
    #[value(name = "rep_only")]
    RepOnly,
    #[value(name = "pred_only")]
    PredOnly,
}

impl From<Mode> for DropoutMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Total => DropoutMode::Total,
            Mode::RepOnly => DropoutMode::RepOnly,
            Mode::PredOnly => DropoutMode::PredOnly,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test dataset.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a twin network on the training rows of a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV (default: <out>/dataset.csv).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run MC Dropout on the test rows and write the variance breakdown.
    Uncertainty {
        #[command(flatten)]
        common: Common,
        /// Checkpoint (default: <out>/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Single dropout mode instead of the full decomposition.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Score a breakdown against its test set.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Breakdown CSV (default: <out>/breakdown.csv).
        #[arg(long)]
        breakdown: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run a full multi-seed experiment suite.
    Reproduce {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
    },
}

fn init_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("TWINDROP_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("TWINDROP_THREADS must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(command: Command) -> twindrop::Result<()> {
    let resolve = |c: Common| RunConfig::load(c.config.as_deref())?.resolve(c.seed, c.out);
    match command {
        Command::Gen { common } => commands::cmd_gen(&resolve(common)?),
        Command::Train { common, data } => commands::cmd_train(&resolve(common)?, data),
        Command::Uncertainty {
            common,
            checkpoint,
            data,
            mode,
        } => commands::cmd_uncertainty(&resolve(common)?, checkpoint, data, mode.map(Into::into)),
        Command::Eval { common, breakdown, data } => commands::cmd_eval(&resolve(common)?, breakdown, data),
        Command::Reproduce { common, suite } => commands::cmd_reproduce(&resolve(common)?, suite),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(msg) = init_threads() {
        log::error!("{msg}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
