mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mhssmamba::data::SynthSpec;
use mhssmamba::profile::SweepParam;

use commands::SplitName;
use config::RunConfig;
use error::CliError;

/// Hyperspectral classification with gated cross-modal attention and a
/// state-space readout.
///
/// Exit codes: 0 success, 2 config error, 3 data/format error,
/// 4 numeric failure.
#[derive(Debug, Parser)]
#[command(name = "mhssmamba", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic labeled cube and print its SHA-256.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 30)]
        bands: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        /// Noise standard deviation.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes <output.dir>/train_log.csv and model.ckpt.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print per-class recall, OA, AA and kappa on one split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
    },
    /// Classify every pixel; writes <out-map>.pgm (class indices) and
    /// <out-map>.ppm (colors).
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out_map: PathBuf,
    },
    /// Finite-difference check of every model gradient on a tiny problem.
    /// Exits 0 iff the worst relative error is below 1e-4.
    Gradcheck {
        /// Takes gradcheck.seed and gradcheck.eps from this file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides gradcheck.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Deliberately break the sigmoid backward rule.
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Count multiply-accumulates per stage over a doubling sweep and
    /// compare the fitted exponents with the closed-form costs.
    Profile {
        /// One of L, state_dim, embed_dim, heads.
        #[arg(long)]
        sweep: SweepParam,
        #[arg(long, default_value_t = 5)]
        points: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            seed,
            height,
            width,
            bands,
            classes,
            noise,
            out,
        } => {
            let spec = SynthSpec {
                seed,
                height,
                width,
                bands,
                classes,
                noise_sigma: noise,
            };
            commands::synth(&spec, &out)
        }
        Command::Train { config } => commands::train_cmd(&RunConfig::load(&config)?),
        Command::Eval {
            config,
            checkpoint,
            split,
        } => commands::eval(&RunConfig::load(&config)?, &checkpoint, split),
        Command::Predict {
            config,
            checkpoint,
            out_map,
        } => commands::predict(&RunConfig::load(&config)?, &checkpoint, &out_map),
        Command::Gradcheck {
            config,
            seed,
            corrupt_backward,
        } => {
            let cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            commands::gradcheck(seed.unwrap_or(cfg.gradcheck_seed), cfg.gradcheck_eps, corrupt_backward)
        }
        Command::Profile { sweep, points } => commands::profile(sweep, points),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
