mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use caf_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Causally masked attention forecaster.
#[derive(Debug, Parser)]
#[command(name = "caf", version)]
struct Cli {
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic river dataset with a planted driver and a decoy.
    Synth(SynthArgs),
    /// Train a forecaster and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint and the reference baselines on a test split.
    Evaluate(EvaluateArgs),
    /// Export attention heatmaps, importance statistics or temporal curves.
    Interpret(InterpretArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4000)]
    pub hours: usize,
    /// Output directory for data.csv, events.json, network.json and synth.json.
    #[arg(long)]
    pub out: PathBuf,
    /// First timestamp, e.g. 2021-05-01T00:00:00.
    #[arg(long)]
    pub start: Option<String>,
    /// Spike rate multiplier in July and August.
    #[arg(long)]
    pub shift: Option<f64>,
    /// Hourly spike probability.
    #[arg(long)]
    pub spike_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Network JSON. Optional with --resume, where the stored network is used.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Run config JSON with optional `model`, `train` and `split` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint for `train.epochs` more epochs.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Per-epoch loss CSV. Defaults to the checkpoint path with a
    /// `.history.csv` extension.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitMode {
    Chronological,
    MonthlyShift,
    /// Both of the above, with a degradation table.
    Shift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceSplit {
    Chronological,
    MonthlyShift,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "baselines_only")]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitMode::Chronological)]
    pub split: SplitMode,
    /// Score only persistence and seasonal naive.
    #[arg(long)]
    pub baselines_only: bool,
    /// Network JSON, needed with --baselines-only when no checkpoint is given.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Run config JSON, read with --baselines-only when no checkpoint is given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for report.json and report.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum What {
    Heatmap,
    Importance,
    Temporal,
    Timeline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Layer {
    First,
    Second,
}

#[derive(Debug, Args)]
pub struct InterpretArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub what: What,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Test period to trace; chronological uses the checkpoint's split.
    #[arg(long, value_enum, default_value_t = TraceSplit::Chronological)]
    pub split: TraceSplit,
    /// Spatial pass shown by the heatmap.
    #[arg(long, value_enum, default_value_t = Layer::First)]
    pub layer: Layer,
    /// Heatmap of this test window instead of the mean.
    #[arg(long)]
    pub index: Option<usize>,
    /// Variable for --what timeline.
    #[arg(long)]
    pub variable: Option<String>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Mask(_) => 2,
        Error::Schema(_) | Error::Data(_) | Error::Input(_) | Error::Shape(_) => 3,
        Error::Diverged { .. } | Error::Numeric(_) => 4,
        Error::State(_) | Error::Io(_) | Error::Json(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAF_LOG", "warn")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Interpret(a) => commands::interpret(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("caf: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
