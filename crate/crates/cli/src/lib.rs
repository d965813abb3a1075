//! Batch front end: decomposition, threshold sweeps, evaluation, training
//! data generation and fixture export.

pub mod commands;
pub mod opspec;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use opspec::{OpSpec, StagePath};
use shred_core::pipeline::PipelineConfig;

/// Exit status for a batch where some shapes failed.
pub const EXIT_PARTIAL: u8 = 2;
/// Exit status for unusable flags, inputs or configuration.
pub const EXIT_CONFIG: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "shred",
    version,
    about = "Split / fix / merge region decomposition"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose shapes and write one decomposition JSON per shape.
    Decompose(DecomposeArgs),
    /// Region count and purity across merge thresholds.
    Sweep(SweepArgs),
    /// Score decomposition JSON files against ground truth.
    Eval(EvalArgs),
    /// Generate training example shards.
    Gendata(GendataArgs),
    /// Write procedurally generated labeled sheets as SHRD1 files.
    Fixtures(FixturesArgs),
    /// Rewrite split shard labels into a network's slot order.
    Match(MatchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageName {
    Split,
    Fix,
    Merge,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Operator source, e.g. `oracle`, `split=heuristic`, `merge=replay:scores.jsonl`.
    #[arg(long = "op", value_name = "SPEC")]
    pub ops: Vec<OpSpec>,
    /// Record a stage's responses, e.g. `merge:scores.jsonl`.
    #[arg(long, value_name = "STAGE:PATH")]
    pub record: Vec<StagePath>,
    /// Answer a stage from a score file, e.g. `merge:scores.jsonl`.
    #[arg(long, value_name = "STAGE:PATH")]
    pub replay: Vec<StagePath>,
    /// With `--record`, also write each recorded request's features to
    /// `<PATH>.requests.bin`, one shard record per score line.
    #[arg(long)]
    pub log_requests: bool,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 64)]
    pub fps_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.025)]
    pub adjacency_eps: f64,
    #[arg(long, default_value_t = 0.1)]
    pub fix_radius: f64,
    #[arg(long, default_value_t = 0.1)]
    pub merge_radius: f64,
    #[arg(long, value_enum)]
    pub stage_off: Vec<StageName>,
    /// Use input coordinates as they are instead of scaling each shape into
    /// the unit ball.
    #[arg(long)]
    pub no_normalize: bool,
}

impl PipelineArgs {
    pub fn config(&self) -> PipelineConfig {
        PipelineConfig {
            fps_k: self.fps_k,
            fix_radius: self.fix_radius,
            merge_outside_radius: self.merge_radius,
            merge_threshold: self.threshold,
            adjacency_threshold: self.adjacency_eps,
            seed: self.seed,
            enable_split: !self.stage_off.contains(&StageName::Split),
            enable_fix: !self.stage_off.contains(&StageName::Fix),
            enable_merge: !self.stage_off.contains(&StageName::Merge),
        }
    }
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(required = true)]
    pub shapes: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// `start:stop:step`.
    #[arg(long, default_value = "0.01:0.99:0.01")]
    pub grid: String,
    /// CSV destination; a `.json` sidecar with the run configuration is
    /// written next to it.
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
    #[arg(required = true)]
    pub shapes: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Decomposition JSON files.
    #[arg(required = true)]
    pub preds: Vec<PathBuf>,
    /// Directory with the matching SHRD1 shapes (`<shape id>.shrd`).
    #[arg(long)]
    pub shapes: PathBuf,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExampleKind {
    Split,
    Fix,
    Merge,
}

#[derive(Debug, Args)]
pub struct GendataArgs {
    #[arg(value_enum)]
    pub kind: ExampleKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub fps_k: usize,
    /// Fix example attempts per shape.
    #[arg(long, default_value_t = 64)]
    pub fix_attempts: usize,
    /// Merge generation runs per shape.
    #[arg(long, default_value_t = 1)]
    pub merge_runs: usize,
    #[arg(long, default_value_t = shred_core::synthgen::shard::EXAMPLES_PER_SHARD)]
    pub per_shard: usize,
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long, default_value = "shards")]
    pub out: PathBuf,
    #[arg(required = true)]
    pub shapes: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 5000)]
    pub min_points: usize,
    #[arg(long, default_value_t = 20000)]
    pub max_points: usize,
    #[arg(long, default_value_t = 4)]
    pub min_parts: usize,
    #[arg(long, default_value_t = 12)]
    pub max_parts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "fixtures")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Split shard whose labels are the ground-truth slots.
    pub shard: PathBuf,
    /// Little-endian f32 logits, `points x 10` per record in shard order.
    #[arg(long)]
    pub logits: PathBuf,
    /// Plain Hungarian matching, without the over-segmentation rewrite.
    #[arg(long)]
    pub plain: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Worker pool sized by `SHRED_THREADS` when set.
fn thread_pool() -> Result<rayon::ThreadPool, String> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("SHRED_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("SHRED_THREADS must be a positive integer, got {v:?}"))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| e.to_string())
}

pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let outcome = pool.install(|| match cli.command {
        Command::Decompose(a) => commands::decompose(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gendata(a) => commands::gendata(&a),
        Command::Fixtures(a) => commands::fixtures(&a),
        Command::Match(a) => commands::match_targets(&a),
    });
    outcome.report()
}
