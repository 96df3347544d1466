mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use pgcn::gcn::AggregationMode;
use pgcn::io::{Profile, Stream};

#[derive(Parser, Debug)]
#[command(name = "pgcn", version, about = "Temporal action localization with proposal graphs")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Pipeline configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, initialization and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Write the proposal graph of each video as an edge list.
    BuildGraph(BuildGraphArgs),
    /// Train one stream and write a checkpoint.
    Train(TrainArgs),
    /// Produce a detection file from one or two stream checkpoints.
    Infer(InferArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Time training iterations for increasing neighbor sample sizes.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator settings file; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub proposals: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub segments: Option<usize>,
    /// Pair classes that differ only in surrounding context.
    #[arg(long)]
    pub context: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GraphArgs {
    /// Drop contextual (overlap) edges.
    #[arg(long)]
    pub no_contextual: bool,
    /// Drop surrounding (nearby, disjoint) edges.
    #[arg(long)]
    pub no_surrounding: bool,
    #[arg(long)]
    pub theta_ctx: Option<f64>,
    #[arg(long)]
    pub theta_sur: Option<f64>,
}

#[derive(Args, Debug)]
pub struct BuildGraphArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = StreamArg::Rgb)]
    pub stream: StreamArg,
    /// Only this video; its edges go to stdout unless `--out` is given.
    #[arg(long)]
    pub video: Option<String>,
    /// Directory receiving `<video>.edges.tsv` files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub graph: GraphArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub stream: StreamArg,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch metrics as TSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Threshold and batch preset.
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// Neighbors drawn per node and layer, or `all`.
    #[arg(long)]
    pub n_s: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub graph: GraphArgs,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub rgb: Option<PathBuf>,
    #[arg(long)]
    pub flow: Option<PathBuf>,
    /// Detection TSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub nms_threshold: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Keep proposal boundaries as they are.
    #[arg(long)]
    pub no_regression: bool,
    /// Video-level class scores restricting and rescoring detections.
    #[arg(long)]
    pub external: Option<PathBuf>,
    #[command(flatten)]
    pub graph: GraphArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub detections: PathBuf,
    /// Take ground truth from a dataset manifest.
    #[arg(long, conflicts_with = "ground_truth", required_unless_present = "ground_truth")]
    pub manifest: Option<PathBuf>,
    /// Ground-truth TSV (`video start end label`).
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Comma-separated tIoU thresholds, or `thumos` / `activitynet`.
    #[arg(long)]
    pub thresholds: Option<String>,
    /// Also write the summary as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Per-class AP as CSV.
    #[arg(long)]
    pub per_class: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    pub proposals: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Comma-separated neighbor sample sizes.
    #[arg(long, default_value = "1,2,3,4,5,10", value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub iterations: usize,
    #[arg(long, default_value_t = 3)]
    pub rounds: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamArg {
    Rgb,
    Flow,
}

impl From<StreamArg> for Stream {
    fn from(s: StreamArg) -> Self {
        match s {
            StreamArg::Rgb => Stream::Rgb,
            StreamArg::Flow => Stream::Flow,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileArg {
    Thumos,
    Activitynet,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Thumos => Profile::Thumos,
            ProfileArg::Activitynet => Profile::ActivityNet,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Gcn,
    Mlp,
    MeanPool,
}

impl From<ModeArg> for AggregationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Gcn => AggregationMode::Gcn,
            ModeArg::Mlp => AggregationMode::Mlp,
            ModeArg::MeanPool => AggregationMode::MeanPool,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("{}", one_line(&e.to_string()));
            return ExitCode::from(2);
        }
    };
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let threads = cli.global.threads;
    match pgcn::par::with_threads(threads, || commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::FAILURE
        }
    }
}

/// Clap's message up to the usage block, folded onto one line.
fn one_line(rendered: &str) -> String {
    rendered
        .lines()
        .map(str::trim)
        .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Error and causes joined by `: `, skipping causes already spelled out by
/// the message above them.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}
