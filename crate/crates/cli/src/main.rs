//! `prefalign`: data preparation, training, evaluation and sweeps for
//! multi-negative preference alignment of item-level recommenders.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "prefalign", version, about = "Preference alignment for sequential recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest a `user<TAB>item<TAB>timestamp` log into a split dataset directory.
    Ingest(IngestArgs),
    /// Generate a synthetic dataset from a hidden Plackett-Luce preference model.
    Synth(SynthArgs),
    /// Run an SFT or alignment stage.
    Train(TrainArgs),
    /// Hit ratio @1 over sampled candidate sets.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Vary β or the number of negatives across seeds.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Drop users with fewer interactions than this.
    #[arg(long, default_value_t = 0)]
    pub min_interactions: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub users: usize,
    #[arg(long, default_value_t = 200)]
    pub items: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 30)]
    pub per_user: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Inverse temperature applied to ground-truth dot products.
    #[arg(long, default_value_t = prefalign::data::DEFAULT_REWARD_SCALE)]
    pub reward_scale: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key=value` file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `ingest` or `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// sft | align
    #[arg(long)]
    pub stage: Option<String>,
    /// sft | bpr | softmax | dpo | sdpo
    #[arg(long)]
    pub loss: Option<String>,
    /// Defaults to 1.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Dispreferred items per sample; defaults to 3.
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Frozen reference: a model file from an SFT run, or `uniform`.
    #[arg(long)]
    pub reference: Option<String>,
    /// Initial policy; alignment defaults to the reference model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// sgd | adam
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// embedding | tabular
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// mean | last
    #[arg(long)]
    pub pooling: Option<String>,
    /// Continue from `state.ckpt` in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Record wall_ms as 0 so metric logs are reproducible byte for byte.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file to score with.
    #[arg(long, conflicts_with = "scorer")]
    pub checkpoint: Option<PathBuf>,
    /// random | uniform | ground-truth
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long)]
    pub data: PathBuf,
    /// Sampled negatives per candidate set (the positive is added).
    #[arg(long, default_value_t = prefalign::data::DEFAULT_CANDIDATE_NEGATIVES)]
    pub candidates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// test | valid
    #[arg(long, default_value = "test")]
    pub part: String,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// A loss kind or `all`.
    #[arg(long, default_value = "all")]
    pub loss: String,
    /// logprob | tabular | embedding | all
    #[arg(long, default_value = "all")]
    pub level: String,
    /// Comma-separated negative counts.
    #[arg(long, default_value = "1,2,3,5,8")]
    pub negatives: String,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = prefalign::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Negate analytic gradients (self-test of the checker).
    #[arg(long)]
    pub flip_sign: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// beta | negatives
    #[arg(long)]
    pub axis: String,
    /// Comma-separated values; defaults depend on the axis.
    #[arg(long)]
    pub values: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, default_value = "0,1,2,3,4")]
    pub seeds: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory; an existing `sweep.csv` there is resumed.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "sdpo")]
    pub loss: String,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 3)]
    pub negatives: usize,
    #[arg(long, default_value_t = 30)]
    pub sft_epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub align_epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub sft_lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub align_lr: f64,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = prefalign::data::DEFAULT_CANDIDATE_NEGATIVES)]
    pub candidates: usize,
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("PREFALIGN_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("PREFALIGN_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            anyhow::bail!("PREFALIGN_THREADS must be ≥ 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Sweep(a) => commands::sweep(a),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
