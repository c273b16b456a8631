//! `stepgan`: dataset generation, training, evaluation, variance probes and
//! timing for the counting benchmark.
//!
//! Exit status is 0 on success, 1 for configuration and input errors and 2
//! when training diverges.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Overrides `run.output_dir` for every command that writes runs.
pub const OUTPUT_ROOT_ENV: &str = "STEPGAN_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "stepgan", version, about = "Sequence GAN credit-assignment workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the counting dataset.
    GenData(GenDataArgs),
    /// Pretrain with MLE and optionally fine-tune adversarially.
    Train(TrainArgs),
    /// Evaluate a generator checkpoint and append a row to a CSV table.
    Eval(EvalArgs),
    /// Per-step variance of discriminator scores across a run's checkpoints.
    ProbeVariance(ProbeArgs),
    /// Mean seconds per adversarial iteration for several strategies.
    BenchTime(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Split sizes as train,valid,test.
    #[arg(long, default_value = "100000,10000,10000")]
    pub sizes: String,
    /// Longest input sequence.
    #[arg(long, default_value_t = 10)]
    pub nmax: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `strategy.kind`.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Comma-separated seeds; one run directory per seed.
    #[arg(long)]
    pub seed: Option<String>,
    /// Overrides `train.total_iterations`.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Shared MLE checkpoint; overrides `run.pretrained`.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Dataset directory; overrides `data.dir`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Continue from `checkpoints/state.ckpt` when present.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Evaluate only the first N test inputs.
    #[arg(long)]
    pub limit: Option<usize>,
    /// MLE checkpoint whose greedy outputs define the general-response set.
    #[arg(long)]
    pub general_from: Option<PathBuf>,
    #[arg(long, default_value = "unknown")]
    pub strategy: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Results table; defaults to `eval.csv` next to the checkpoint's run.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Lines of `input<TAB>response`, tokens separated by spaces.
    #[arg(long)]
    pub probe_file: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated strategies, e.g. `stepgan,mcts,seqgan`.
    #[arg(long)]
    pub strategies: String,
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 20)]
    pub iterations: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<stepgan::Error>() {
        Some(stepgan::Error::Divergence { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::ProbeVariance(a) => commands::probe_variance(a),
        Command::BenchTime(a) => commands::bench_time(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
