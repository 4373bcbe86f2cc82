//! `pvfaultnet`: synthesize, augment, train, evaluate and audit the PV-cell
//! defect classifier from one binary.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pvfaultnet::dataset::{InputScaling, DEFAULT_VALID_COUNT};
use pvfaultnet::model::Init;
use pvfaultnet::trainer::{DecayMode, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "pvfaultnet",
    version,
    about = "Lightweight CNN for PV-cell defect classification"
)]
struct Cli {
    /// Worker threads for data loading and kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log level: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic two-class electroluminescence-like image set.
    SynthData(SynthArgs),
    /// Expand a dataset to per-class targets with seeded augmented copies.
    Augment(AugmentArgs),
    /// Train a classifier and write a run directory.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Classify individual images.
    Predict(PredictArgs),
    /// Print per-layer output shapes and learnable-parameter counts.
    AuditParams(AuditArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory; must not exist.
    #[arg(long)]
    out: PathBuf,
    /// Images generated per class.
    #[arg(long, default_value_t = 16)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image side in pixels.
    #[arg(long, default_value_t = 224)]
    side: usize,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Dataset: class-folder directory, manifest.jsonl, or a directory holding one.
    root: PathBuf,
    /// Output directory; must not exist.
    #[arg(long)]
    out: PathBuf,
    /// TOML augmentation spec; keys it sets override the flags below.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Final count for one class, originals included (repeatable).
    /// Default: defective=361 normal=177.
    #[arg(long = "target", value_name = "CLASS=COUNT", value_parser = parse_target)]
    targets: Vec<(String, usize)>,
    /// Chance that each transform joins a copy's recipe.
    #[arg(long, default_value_t = 0.5)]
    inclusion_probability: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset: class-folder directory, manifest.jsonl, or a directory holding one.
    data: PathBuf,
    /// Run directory; must not exist. Default: runs/seed<SEED>[_N].
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML training config; keys it sets override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long = "lr", default_value_t = 0.02)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Decay rate; see --decay-mode.
    #[arg(long, default_value_t = 0.01)]
    decay: f64,
    /// weight_decay: L2 coefficient. lr_decay: lr / (1 + decay * epoch).
    #[arg(long, default_value_t = DecayMode::WeightDecay)]
    decay_mode: DecayMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// base, batchnorm, dropout25 or batchnorm+dropout25.
    #[arg(long, default_value_t = Variant::Base)]
    variant: Variant,
    /// Network input side; images are resized to it.
    #[arg(long = "input", default_value_t = 224)]
    input_side: usize,
    /// centered (pixel/255 - 0.5) or unit_range (pixel/255).
    #[arg(long, default_value_t = InputScaling::Centered)]
    input_scaling: InputScaling,
    /// he_normal or glorot_uniform.
    #[arg(long, default_value_t = Init::HeNormal)]
    init: Init,
    /// Global gradient L2-norm cap; 0 disables.
    #[arg(long, default_value_t = 5.0)]
    grad_clip: f64,
    /// Extra checkpoint every N epochs; 0 keeps only milestones and final.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Validation images held out when the dataset carries no split; 0 trains on everything.
    #[arg(long, default_value_t = DEFAULT_VALID_COUNT)]
    valid: usize,
    /// Ignore any split stored in the manifest and draw a fresh one.
    #[arg(long)]
    resplit: bool,
    /// Validate on originals only; augmented copies of validation images are left out.
    #[arg(long)]
    originals_only: bool,
    /// Decode images on demand instead of caching them all in memory.
    #[arg(long)]
    stream: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    All,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset: class-folder directory, manifest.jsonl, or a directory holding one.
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Default: valid when the manifest has validation samples, else all.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Refuse checkpoints whose architecture is not built for this input side.
    #[arg(long = "input")]
    input_side: Option<usize>,
    /// Refuse checkpoints of another variant (used with --input, default base).
    #[arg(long)]
    variant: Option<Variant>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Image files or directories (searched recursively).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// One JSON object per line instead of tab-separated text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// Network input side.
    #[arg(long = "input", default_value_t = 224)]
    input_side: usize,
    #[arg(long, default_value_t = Variant::Base)]
    variant: Variant,
    #[arg(long)]
    json: bool,
    /// Exit nonzero when a count differs from the published figures.
    #[arg(long)]
    strict: bool,
}

fn parse_target(s: &str) -> Result<(String, usize), String> {
    let (class, count) = s
        .split_once('=')
        .ok_or_else(|| format!("expected CLASS=COUNT, got '{s}'"))?;
    let count = count.parse().map_err(|e| format!("bad count in '{s}': {e}"))?;
    Ok((class.to_string(), count))
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.downcast_ref::<std::io::Error>()
        .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
}

/// The context chain joined by ": ", skipping causes their parent already
/// quotes.
fn one_line(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out.replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::SynthData(a) => commands::synth_data(a),
        Command::Augment(a) => commands::augment(a),
        Command::Train(a) => commands::train(*a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::AuditParams(a) => commands::audit_params(a),
    };
    match result {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
