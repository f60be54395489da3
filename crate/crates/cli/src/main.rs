//! `magd`: synthesis, propagation, training, evaluation, verification and
//! export over multimodal attributed graphs.

mod cmd;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use magd_core::tasks::ModelKind;
use thiserror::Error;

/// Process exit codes. Stable for scripts and CI.
pub mod exit {
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const NUMERIC: u8 = 4;
    pub const MISSING: u8 = 5;
    pub const VERIFICATION: u8 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Missing(String),
    #[error("{0}")]
    Verification(String),
    #[error(transparent)]
    Core(#[from] magd_core::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        use magd_core::Error as E;
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Io(_) => exit::IO,
            CliError::Missing(_) => exit::MISSING,
            CliError::Verification(_) => exit::VERIFICATION,
            CliError::Core(e) => match e {
                E::Config(_) => exit::USAGE,
                E::Storage { source, .. } if source.kind() == std::io::ErrorKind::NotFound => exit::MISSING,
                E::Storage { .. }
                | E::Parse { .. }
                | E::Json(_)
                | E::Integrity(_)
                | E::Consistency(_)
                | E::Shape(_)
                | E::Index(_) => exit::IO,
                E::Singular { .. }
                | E::NonFinite { .. }
                | E::ContractViolation { .. }
                | E::Capacity(_)
                | E::State(_)
                | E::Diverged { .. } => exit::NUMERIC,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn note(msg: impl AsRef<str>) {
    eprintln!("magd: {}", msg.as_ref());
}

#[derive(Debug, Parser)]
#[command(name = "magd", version, about = "Aligned multimodal graph diffusion engine")]
struct Cli {
    /// Worker threads; defaults to the hardware count.
    #[arg(long, global = true, env = "MAGD_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic graph and write it as Mag files.
    Synth(SynthArgs),
    /// Precompute hop trajectories into a store.
    Propagate(PropagateArgs),
    /// Train a model on a trajectory store and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print a metric report.
    Eval(EvalArgs),
    /// Run the theory verifiers and write certificates.
    Verify(VerifyArgs),
    /// Time precompute and per-epoch work, parallel against one thread.
    Bench(BenchArgs),
    /// Write drift-curve and correlation CSVs for a store.
    ExportCorrelations(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.05)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    pub p_out: f64,
    #[arg(long, default_value_t = 32)]
    pub d_t: usize,
    #[arg(long, default_value_t = 32)]
    pub d_i: usize,
    #[arg(long, default_value_t = 0.0)]
    pub conflict: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 2.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Config file plus per-key overrides. Flags win over the file.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON experiment config; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any key, e.g. `--set train.patience=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    /// Master seed; also sets the split and training seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: magd_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct PropagateArgs {
    /// Directory written by `synth` (or any Mag file set).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Replace an existing store.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainTask {
    Nc,
    Lp,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "nc")]
    pub task: TrainTask,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Nc,
    Lp,
    Cluster,
    Retrieval,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "nc")]
    pub task: EvalTask,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Theorem {
    Contraction,
    Magnitude,
    Fusion,
    Complexity,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Largest random graph in the contraction trials.
    #[arg(long, default_value_t = 16)]
    pub n_max: usize,
    #[arg(long, value_enum)]
    pub only: Option<Theorem>,
    /// Edge counts for the complexity sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, default_value = "certificates")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    #[arg(long, default_value_t = 10.0)]
    pub avg_degree: f64,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Use the checkpoint's embeddings instead of hop means.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn init_threads(cli: &Cli, source: Option<ValueSource>) -> CliResult<()> {
    let Some(n) = cli.threads else {
        note(format!("threads: {} (hardware default)", rayon::current_num_threads()));
        return Ok(());
    };
    if n == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let origin = match source {
        Some(ValueSource::EnvVariable) => "MAGD_THREADS",
        _ => "--threads",
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    note(format!("threads: {n} (from {origin})"));
    Ok(())
}

fn run(cli: Cli, source: Option<ValueSource>) -> CliResult<()> {
    init_threads(&cli, source)?;
    match cli.command {
        Command::Synth(a) => cmd::synth(&a),
        Command::Propagate(a) => cmd::propagate(&a),
        Command::Train(a) => cmd::train(&a),
        Command::Eval(a) => cmd::eval(&a),
        Command::Verify(a) => cmd::verify(&a),
        Command::Bench(a) => cmd::bench(&a),
        Command::ExportCorrelations(a) => cmd::export_correlations(&a),
    }
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    let source = matches.value_source("threads");
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli, source) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("magd: error: {e}");
            ExitCode::from(e.code())
        }
    }
}
