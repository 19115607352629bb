//! `stunt`: prepare tabular data, meta-train an encoder on self-generated
//! tasks, search hyperparameters with pseudo-validation, and evaluate on
//! few-shot labeled sets.
//!
//! Exit codes: 0 success, 1 user or configuration error, 2 internal error.
//! Relative `--out` directories are placed under `$STUNT_OUTPUT_ROOT` when
//! it is set. Every command writes `manifest.json` into its output directory.

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "stunt", version, about = "Few-shot tabular learning from self-generated tasks")]
pub struct Cli {
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Write a synthetic stand-in dataset (CSV + schema).
    Synth(SynthArgs),
    /// Load, encode, split and scale a CSV.
    Prepare(PrepareArgs),
    /// Meta-train an encoder on a prepared dataset.
    Train(TrainArgs),
    /// Train every point of a (shot, query) × way grid and rank them.
    Search(SearchArgs),
    /// Few-shot classification accuracy over many labeled-set seeds.
    Evaluate(EvaluateArgs),
    /// Few-shot kNN regression MSE over many labeled-set seeds.
    Regress(RegressArgs),
    /// Merge result files into a markdown table.
    Report(ReportArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Prepare(_) => "prepare",
            Command::Train(_) => "train",
            Command::Search(_) => "search",
            Command::Evaluate(_) => "evaluate",
            Command::Regress(_) => "regress",
            Command::Report(_) => "report",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// diabetes, income, cmc or abalone.
    #[arg(long)]
    pub name: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct PrepareArgs {
    #[arg(long)]
    pub csv: PathBuf,
    /// TOML schema with one [[column]] entry per CSV column.
    #[arg(long)]
    pub schema: PathBuf,
    /// min_max or standardize; overrides the schema's `scaling`.
    #[arg(long)]
    pub scaling: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Where the training config comes from. Precedence: `--config` file, else
/// the `--dataset` preset, else defaults; then `--profile`, `--seed` and
/// `--steps` are applied on top.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset name; selects published (shot, query, way) presets and
    /// labels result files.
    #[arg(long)]
    pub dataset: Option<String>,
    /// fast (H = D = 256, 2K steps) or full (H = D = 1024, 10K steps).
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub splits: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    #[arg(long)]
    pub splits: PathBuf,
    /// TOML grid: `shot_query = [[1, 5], ...]` and `way = [...]`. Defaults
    /// to the published grid of `--dataset`.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Also score each point's best checkpoint on the test split and
    /// report the rank correlation with pseudo-validation accuracy.
    #[arg(long)]
    pub with_test: bool,
    /// Shots per class for `--with-test`.
    #[arg(long, default_value_t = 1)]
    pub shots: usize,
    /// Labeled-set seeds for `--with-test`.
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Config the checkpoint is expected to come from; a hash mismatch is
    /// reported as a warning. Defaults to `config.toml` beside the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    /// Shots per class, comma-separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1])]
    pub shots: Vec<usize>,
    /// Labeled-set seeds 0..N.
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct RegressArgs {
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    /// Labeled rows per target-quantile bin.
    #[arg(long, default_value_t = 5)]
    pub shots: usize,
    /// Neighbours; defaults to `--shots`.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Result files, or directories whose `*.jsonl` files are read.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// An error caused by the invocation rather than by the pipeline.
#[derive(Debug)]
pub struct UserError(pub String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

pub fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<stunt::Error>() {
            return if e.is_user_error() { 1 } else { 2 };
        }
        if cause.is::<UserError>() || cause.is::<std::io::Error>() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match commands::run(cli.command, commands::Context::new(argv)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
