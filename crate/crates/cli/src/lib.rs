//! Command line entry points and the routing service.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod service;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Bad input or configuration; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// 2 for usage and validation failures, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<radialrouter_core::Error>() {
        Some(e) if e.is_usage() => EXIT_USAGE,
        _ => EXIT_INTERNAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "radialrouter", version, about = "Cost-aware LLM routing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// LLM catalog JSON.
    #[arg(long)]
    pub catalog: PathBuf,
    /// Query records, one JSON object per line.
    #[arg(long)]
    pub dataset: PathBuf,
    /// RRE1 embedding file.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Query ids in embedding row order. Defaults to manifest.txt next to
    /// the embeddings.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// performance_first, balance, cost_first or custom.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark with known best LLMs per group.
    Synth(SynthArgs),
    /// Convert a RouterBench per-query CSV into catalog and dataset files.
    Adapt(AdaptArgs),
    /// Cluster training queries into semantic groups.
    Cluster(ClusterArgs),
    /// Train a router.
    Train(TrainArgs),
    /// Evaluate baselines and an optional checkpoint.
    Eval(EvalArgs),
    /// Route one query embedding.
    Route(RouteArgs),
    /// Serve routing decisions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub llms: usize,
    #[arg(long, default_value_t = 6)]
    pub groups: usize,
    #[arg(long, default_value_t = 40)]
    pub per_group: usize,
    #[arg(long, default_value_t = 32)]
    pub d_enc: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Standard deviation of embeddings around their group centroid.
    #[arg(long, default_value_t = 0.3)]
    pub spread: f64,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    /// RouterBench wide per-query CSV.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub cost_scale: f64,
    /// Use the reference cost table for known LLMs.
    #[arg(long)]
    pub reference_costs: bool,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of groups; defaults to the number of dataset tags.
    #[arg(long)]
    pub groups: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Groups file from `cluster`; required when lambda > 0.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from a `last.json` checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Queries to evaluate on.
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    /// Groups file, for experiments that train with lambda > 0.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Train one router per configured alpha and tabulate.
    #[arg(long)]
    pub sweep: bool,
    /// Nested-pool experiment.
    #[arg(long)]
    pub pool_growth: bool,
    /// Backbone and loss ablations.
    #[arg(long)]
    pub ablation: bool,
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Active catalog; must match the checkpoint's.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Embedding as a JSON array.
    #[arg(long, conflicts_with_all = ["input", "text"])]
    pub embedding: Option<String>,
    /// File with a JSON array or {"embedding": [...]}; stdin when absent.
    #[arg(long, conflicts_with = "text")]
    pub input: Option<PathBuf>,
    /// Query text, encoded through --encoder-cmd.
    #[arg(long, requires = "encoder_cmd")]
    pub text: Option<String>,
    /// Shell command reading text on stdin and printing a JSON array.
    #[arg(long)]
    pub encoder_cmd: Option<String>,
    /// Directory for the run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Directory for the run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("RADIALROUTER_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
}

/// Parses `args` and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
