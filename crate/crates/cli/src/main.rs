//! `neuron`: data generation, training, evaluation, gradient checking and
//! attribute-count sweeps.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use neuron_core::diagnostics::GRADCHECK_STEP;
use neuron_core::eval::EvalMode;

use crate::commands::DataSource;
use crate::config::Overrides;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "neuron", version, about = "Zero-shot skeleton action recognition with evolving micro-prototypes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory that receives every output of the run.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Clone, clap::Args)]
struct DataArgs {
    /// Directory with train.json, test.json, bank.json and protocol.json.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Semantic bank to use instead of `<data>/bank.json`.
    #[arg(long, requires = "data")]
    bank: Option<PathBuf>,
    /// Split files hold precomputed feature maps.
    #[arg(long, requires = "data")]
    features: bool,
}

impl DataArgs {
    fn source(&self) -> Option<DataSource> {
        self.data.as_ref().map(|dir| DataSource {
            dir: dir.clone(),
            bank: self.bank.clone(),
            features: self.features,
        })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Zsl,
    Gzsl,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset, semantic bank and split protocol.
    GenData,
    /// Train a model; without --data, on freshly generated synthetic data.
    Train {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long, required = true)]
        ckpt: PathBuf,
        #[arg(long, required = true)]
        data: PathBuf,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        features: bool,
        #[arg(long, value_enum, default_value = "gzsl")]
        mode: ModeArg,
        /// Score with the fused single prediction instead of the
        /// two-element set.
        #[arg(long)]
        strict: bool,
    },
    /// Finite-difference check of the full forward pass on a toy batch.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        fixture_seed: u64,
        #[arg(long, default_value_t = GRADCHECK_STEP)]
        step: f64,
    },
    /// Train and evaluate over a grid of spatial × temporal attribute
    /// counts on synthetic data; writes sweep.csv.
    Sweep {
        #[arg(long, value_delimiter = ',', default_values_t = [20, 50, 80, 100])]
        grid: Vec<usize>,
    },
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let resolved = cli.overrides.resolve()?;
    let out = cli.out.as_path();
    match cli.command {
        Command::GenData => commands::gen_data(&resolved, out),
        Command::Train { data } => commands::train_cmd(&resolved, data.source().as_ref(), out),
        Command::Eval {
            ckpt,
            data,
            bank,
            features,
            mode,
            strict,
        } => {
            let source = DataSource {
                dir: data,
                bank,
                features,
            };
            let mode = match mode {
                ModeArg::Zsl => EvalMode::Zsl,
                ModeArg::Gzsl => EvalMode::Gzsl,
            };
            commands::eval_cmd(&resolved, &ckpt, &source, mode, strict, out)
        }
        Command::Gradcheck { fixture_seed, step } => commands::gradcheck_cmd(&resolved, fixture_seed, step, out),
        Command::Sweep { grid } => {
            if grid.is_empty() || grid.contains(&0) {
                return Err(CliError::Usage(format!("grid values must be positive: {grid:?}")));
            }
            commands::sweep_cmd(&resolved, &grid, out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(manifest) => {
            log::info!("run manifest: {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("neuron: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
