//! `sfaunet`: train, evaluate and run SFA-UNet from the command line.
//!
//! Exit codes: 0 success, 1 failed self-check (or internal error),
//! 2 bad configuration / shape mismatch, 3 unreadable data, 4 numeric abort.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::Size;

#[derive(Parser, Debug)]
#[command(name = "sfaunet", version, about = "Infrared small-object segmentation with SFA-UNet")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes final.ckpt, best.ckpt, history.csv and run.cfg.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print the metrics row.
    Eval(EvalArgs),
    /// Write a probability map and a binary mask for one image.
    Infer(InferArgs),
    /// Run the embedded oracle suite.
    Check(CheckArgs),
    /// Write a synthetic dataset (images/ and masks/) to --out.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// key = value file; command-line flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model input size (and synthetic image size): N or HxW.
    #[arg(long)]
    pub size: Option<Size>,
    #[arg(long)]
    pub width_scale: Option<f64>,
    /// Seeds the model initialization, synthetic data and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Directory with images/ and masks/ (PNG or PGM, paired by file stem).
    #[arg(long, conflicts_with = "synthetic")]
    pub dataset: Option<PathBuf>,
    /// Use generated data instead of --dataset.
    #[arg(long)]
    pub synthetic: bool,
    /// Number of synthetic images.
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    /// Initial weights (otherwise a fresh seeded model).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate on the training set instead of holding out 20%.
    #[arg(long)]
    pub eval_on_train: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Score the ground-truth masks against themselves (no model).
    #[arg(long)]
    pub identity_fixture: bool,
}

#[derive(Args, Debug, Clone)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    pub image: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CheckArgs {
    #[arg(long, hide = true)]
    pub corrupt_scharr: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub count: Option<usize>,
}

/// A message plus the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    pub fn new(code: u8, msg: impl Into<String>) -> Self {
        Self { code, msg: msg.into() }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::new(2, msg)
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self::new(3, msg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Check(a) => commands::check(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
