//! Command-line surface: synthetic data generation, training (with optional
//! hyperparameter search), prediction with graph-record export, evaluation
//! reports, and model inspection.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "quadforest",
    version,
    about = "Hierarchical quadratic random forest over multichannel volumes"
)]
struct Cli {
    /// Bound on internal parallelism (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic labeled volumes (and optionally a manifest).
    Synth(SynthArgs),
    /// Train a forest, or run a random hyperparameter search when grids are given.
    Train(TrainArgs),
    /// Predict volumes of a manifest split, writing predictions and graph records.
    Predict(PredictArgs),
    /// Score prediction files against the manifest's reference labels.
    Eval(EvalArgs),
    /// Dump the parameters stored in every node of a model.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the volume files.
    #[arg(long)]
    out: PathBuf,
    /// blocks | concentric
    #[arg(long, default_value = "blocks")]
    preset: String,
    /// Volume dimensions as X,Y,Z.
    #[arg(long, default_value = "48,48,48")]
    dims: String,
    #[arg(long, default_value_t = 4)]
    classes: u16,
    /// Additive Gaussian channel noise (standard deviation).
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Volumes per split, e.g. "train:6,val:1,test:2".
    #[arg(long, default_value = "train:1")]
    splits: String,
    /// Also write a dataset manifest referencing the generated volumes.
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output model path.
    #[arg(long)]
    out: PathBuf,
    /// Fixed hyperparameters (JSON file); mutually exclusive with --grids.
    #[arg(long, conflicts_with = "grids")]
    hyper: Option<PathBuf>,
    /// Hyperparameter grids (JSON file) enabling random search on the val split.
    #[arg(long)]
    grids: Option<PathBuf>,
    /// Trial cap for the random search.
    #[arg(long, default_value_t = quadforest::hyperopt::DEFAULT_MAX_TRIALS)]
    max_trials: usize,
    /// Where to write the line-delimited trial log (random search only).
    #[arg(long)]
    trial_log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pyramid layers.
    #[arg(long, default_value_t = 5)]
    layers: usize,
    /// Optional path for the phase-timing report (also printed).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Output directory for prediction and graph-record files.
    #[arg(long)]
    out: PathBuf,
    /// Which split to predict: train | val | test | all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Standardize test features across the patches visiting each node
    /// instead of with the node's stored training statistics.
    #[arg(long)]
    batch_normalize: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding the prediction files written by `predict`.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Optional path for the metrics report (also printed).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // A zero keeps rayon's default; anything else bounds the pool.
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Train(args) => commands::train(args),
        Command::Predict(args) => commands::predict(args),
        Command::Eval(args) => commands::eval(args),
        Command::Inspect(args) => commands::inspect(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
