//! `stflow`: synthesize datasets, train and evaluate flow models, run the
//! historical-average baseline, print model summaries and gradient checks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Compat(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Compat(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }
}

impl From<stflow_core::Error> for CliError {
    fn from(e: stflow_core::Error) -> Self {
        use stflow_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. } => CliError::Io(msg),
            E::Checkpoint(_) => CliError::Compat(msg),
            E::Numerical(_) => CliError::Numerical(msg),
            E::Shape { .. } | E::Config(_) | E::Data(_) => CliError::Usage(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "stflow", version, about = "Spatio-temporal crowd-flow prediction")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// JSON run configuration (sections model, train, data, ablation).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration value, e.g. `ablation.attention=false`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic city-flow dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Grid as NxM.
        #[arg(long, default_value = "16x8")]
        grid: String,
        #[arg(long, default_value_t = 60)]
        days: usize,
        /// Minutes between frames.
        #[arg(long, default_value_t = 60)]
        period: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Relative noise level; 0 gives exactly weekly-periodic flows.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 3)]
        hotspots: usize,
    },
    /// Train one model per configured seed and evaluate each on the test split.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory (overrides data.dir).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a gnuplot script for the loss curves.
        #[arg(long)]
        plot: bool,
    },
    /// Evaluate a checkpoint on the test split it was trained against.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Reject the checkpoint unless it matches this configuration.
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Write the metrics as CSV here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the frame at one instant as CSV (row, col, inflow, outflow).
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Target instant, `YYYY-MM-DDTHH:MM:SS`.
        #[arg(long)]
        at: String,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer parameter and FLOP table.
    Summary {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Start from a named architecture instead of the defaults.
        #[arg(long, value_parser = ["bike-nyc", "taxi-bj", "tiny"])]
        preset: Option<String>,
        /// Write the table as CSV here as well.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        /// Without a configuration the 8x4, closeness 3, one-level model is checked.
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        threshold: f64,
    },
    /// Historical-average baseline on the test split.
    BaselineHa {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory (overrides data.dir).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn threads() -> Result<usize, CliError> {
    match std::env::var("STFLOW_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!("STFLOW_THREADS must be a positive integer, got {:?}", v))),
        },
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth {
            out,
            grid,
            days,
            period,
            seed,
            noise,
            hotspots,
        } => commands::synth(&out, &grid, days, period, seed, noise, hotspots),
        Command::Train { cfg, data, out, plot } => commands::train(&cfg, data, &out, plot),
        Command::Evaluate {
            checkpoint,
            data,
            cfg,
            out,
        } => commands::evaluate(&checkpoint, &data, &cfg, out.as_deref()),
        Command::Predict {
            checkpoint,
            data,
            at,
            out,
        } => commands::predict(&checkpoint, &data, &at, out.as_deref()),
        Command::Summary { cfg, preset, csv } => commands::summary(&cfg, preset.as_deref(), csv.as_deref()),
        Command::Gradcheck {
            cfg,
            samples,
            seed,
            threshold,
        } => commands::gradcheck(&cfg, samples, seed, threshold),
        Command::BaselineHa { cfg, data, out } => commands::baseline_ha(&cfg, data, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads().and_then(|n| stflow_core::par::with_threads(n, || run(cli.cmd)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.code())
        }
    }
}
