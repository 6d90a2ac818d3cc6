use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dadsim::dataset::Regime;
use dadsim::losses::LossKind;

mod commands;
mod config;

/// Failure with the exit code it maps to: 1 for bad input, 2 for runtime failures.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            error: anyhow::anyhow!(msg.into()),
        }
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            error: anyhow::anyhow!(msg.into()),
        }
    }
}

impl From<dadsim::Error> for CliError {
    fn from(e: dadsim::Error) -> Self {
        use dadsim::Error as E;
        let code = match e {
            E::Parse { .. }
            | E::Shape(_)
            | E::Config(_)
            | E::OutOfRange(_)
            | E::NonFinite(_)
            | E::Csv(_) => 1,
            E::Io { .. } | E::Divergence { .. } | E::Checkpoint { .. } | E::Training(_) => 2,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dadsim", version, about = "Train and improve LSTM process simulators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic plant dataset as CSV.
    GenData(GenDataArgs),
    /// Teacher-forced base training.
    Train(TrainArgs),
    /// Improve a checkpoint on its own rollouts.
    Improve(ImproveArgs),
    /// Roll a checkpoint forward under recorded controls.
    Simulate(SimulateArgs),
    /// Score a checkpoint on held-out day episodes.
    Evaluate(EvaluateArgs),
    /// Compare two per-episode reports.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random stream [default: config seed, then RF_SEED, then 0].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Days of one-minute samples [default: 60].
    #[arg(long)]
    days: Option<usize>,
    /// Measurement noise standard deviation [default: 0.01].
    #[arg(long)]
    noise_std: Option<f64>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input CSV path.
    #[arg(long)]
    data: PathBuf,
    /// Trailing whole days held out for evaluation [default: 10].
    #[arg(long)]
    test_days: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// State columns after the index column [default: 3].
    #[arg(long)]
    state_dim: Option<usize>,
    /// Control columns after the states [default: 1].
    #[arg(long)]
    control_dim: Option<usize>,
    /// [default: 20]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Fraction of training rows used for validation [default: 0.1].
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Training windows per epoch [default: all].
    #[arg(long)]
    samples_per_epoch: Option<usize>,
    /// Validation windows per epoch [default: all].
    #[arg(long)]
    validation_samples: Option<usize>,
    /// [default: 64]
    #[arg(long)]
    hidden_size: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    num_layers: Option<usize>,
    /// [default: 0.15]
    #[arg(long)]
    dropout: Option<f64>,
    /// History window length l [default: 30].
    #[arg(long)]
    history_length: Option<usize>,
}

#[derive(Args, Debug)]
struct ImproveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Base checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Episode regime E1, E2, E3 or E4 [default: E4].
    #[arg(long)]
    experiment: Option<Regime>,
    /// [default: 10]
    #[arg(long)]
    min_el: Option<usize>,
    /// [default: 480]
    #[arg(long)]
    max_el: Option<usize>,
    /// Episodes per epoch [default: E1/E2 all, E3/E4 enough to tile the data].
    #[arg(long)]
    max_episodes: Option<usize>,
    /// mse or dilate [default: dilate].
    #[arg(long)]
    loss: Option<LossKind>,
    /// DILATE shape weight [default: 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Soft-min smoothing [default: 0.01].
    #[arg(long)]
    gamma: Option<f64>,
    /// [default: 50]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Steps per held-out test simulation [default: 1440].
    #[arg(long)]
    test_horizon: Option<usize>,
    /// Held-out test simulations per epoch [default: 5].
    #[arg(long)]
    test_episodes: Option<usize>,
    /// Train one step at a time on rollout inputs instead of through the rollout.
    #[arg(long)]
    per_step_dad: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    ckpt: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Row index of the last real observation.
    #[arg(long)]
    start: usize,
    /// Steps to simulate [default: 1440].
    #[arg(long, default_value_t = 1440)]
    steps: usize,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    ckpt: PathBuf,
    /// Per-episode report CSV.
    #[arg(long)]
    out: PathBuf,
    /// Bucket report CSV [default: <out>.buckets.csv].
    #[arg(long)]
    buckets: Option<PathBuf>,
    /// Steps per episode [default: 1440].
    #[arg(long)]
    horizon: Option<usize>,
    /// Day episodes to score [default: every held-out day].
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Per-episode report of the reference model.
    #[arg(long)]
    a: PathBuf,
    /// Per-episode report of the candidate model.
    #[arg(long)]
    b: PathBuf,
    /// Comparison CSV.
    #[arg(long)]
    out: PathBuf,
    /// Bucket means pivoted by model label.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[arg(long, default_value = "a")]
    label_a: String,
    #[arg(long, default_value = "b")]
    label_b: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Improve(a) => commands::improve(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
