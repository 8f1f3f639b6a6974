//! `convnet`: prepare CIFAR-10 data, learn dictionaries, train, evaluate,
//! predict, gradient-check and project.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
//! failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use convnet_core::Error;

#[derive(Parser)]
#[command(name = "convnet", version, about = "Convolutional networks for CIFAR-10, trained from scratch")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run-config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Split, fit preprocessing on the training half and write prepared sets.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Pipeline override: raw, rescale-center, gcn, gcn-zca.
        #[arg(long)]
        pipeline: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a spherical K-means patch dictionary on the training half.
    DictLearn {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 400)]
        centroids: usize,
        #[arg(long, default_value_t = 6)]
        patch: usize,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long, default_value_t = 0.25)]
        alpha: f64,
        /// Patches sampled per centroid.
        #[arg(long, default_value_t = 10)]
        patches_per_centroid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes curve.csv, best.ckpt, last.ckpt and run.txt.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `prepare` (otherwise data is prepared in memory).
        #[arg(long)]
        prepared: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Print the resolved model, shapes, parameter counts and schedule, then exit.
        #[arg(long)]
        dry_run: bool,
        /// Record elapsed seconds in the curve (otherwise 0, for reproducible output).
        #[arg(long)]
        wall_clock: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Loss and error of a checkpoint on a prepared set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prepared: Option<PathBuf>,
        /// Which set to evaluate: train, valid or test.
        #[arg(long, default_value = "valid")]
        set: String,
    },
    /// Write `id,label` predictions for the test set.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prepared: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient check of small builtin instantiations.
    Gradcheck {
        /// Builtin names, or `all`.
        #[arg(default_value = "all")]
        models: Vec<String>,
        /// Variants to check: plain, dropout, maxout, or all.
        #[arg(long, default_value = "all")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = convnet_core::trainer::DEFAULT_GRADCHECK_TOLERANCE)]
        tolerance: f64,
    },
    /// Two-component PCA scatter of the raw training images as x,y,label CSV.
    Pca2 {
        #[command(flatten)]
        common: Common,
        /// Rows used to estimate the covariance.
        #[arg(long, default_value_t = 10_000)]
        cap: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Data(_) | Error::Io(_) | Error::Format(_) => 2,
        Error::Numeric(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
