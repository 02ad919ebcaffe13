//! `vlqual`: ingest, score, evaluate, retrieve, qualify and serve.
//!
//! Exit codes: 0 success, 1 operational error, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vlqual_core::model::{PromptVariant, SigmaConvention, Strategy};
use vlqual_core::retrieval::RankMode;

#[derive(Debug, Parser)]
#[command(name = "vlqual", version, about = "Hybrid vision-language qualification of weld cross-sections")]
pub struct Cli {
    /// Knowledge-base directory.
    #[arg(long, global = true, env = "VLQUAL_DATA_DIR", default_value = "vlqual-data")]
    pub data_dir: PathBuf,

    /// Log more detail to stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load embeddings, expert labels or criteria into the knowledge base.
    Ingest(IngestArgs),
    /// Score every sample for one criterion and write the score table.
    Score(ScoreArgs),
    /// Compare predictions with expert labels.
    Evaluate(EvaluateArgs),
    /// Rank samples against criterion prompts.
    Retrieve(RetrieveArgs),
    /// Run the multi-criterion detection tree.
    Tree(TreeArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Write canonical tables for external tools.
    Export(ExportArgs),
    /// Write a seeded synthetic corpus (embeddings, labels, criteria).
    Synthetic(SyntheticArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Interchange file (one JSON record per line).
    #[arg(long, value_name = "FILE")]
    pub embeddings: Vec<PathBuf>,
    /// Expert labels CSV (`sample,dilution,haz,...`).
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    /// JSON array of assessment criteria.
    #[arg(long, value_name = "FILE")]
    pub criteria: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    /// Four decimals, as in published tables.
    Fixed4,
    /// Shortest representation that round-trips.
    Full,
}

#[derive(Debug, Args)]
pub struct FusionArgs {
    #[arg(long, value_parser = parse_from_str::<Strategy>, default_value = "zscore_sum")]
    pub strategy: Strategy,
    /// Weights for (text, image) z-scores under the weighted strategy.
    #[arg(long, value_parser = parse_weights, default_value = "1,1", allow_hyphen_values = true)]
    pub weights: (f64, f64),
    /// Scores at or above the threshold are positive.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub threshold: f64,
    /// Standard-deviation convention: population or sample.
    #[arg(long, value_parser = parse_from_str::<SigmaConvention>, default_value = "population")]
    pub sigma: SigmaConvention,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Prompt wording: plain or color.
    #[arg(long, value_parser = parse_from_str::<PromptVariant>, default_value = "plain")]
    pub variant: PromptVariant,
    /// Model scoring images against prompts.
    #[arg(long, default_value = "clip")]
    pub text_model: String,
    /// Model scoring images against reference images.
    #[arg(long, default_value = "flava")]
    pub image_model: String,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub criterion: String,
    #[command(flatten)]
    pub fusion: FusionArgs,
    #[command(flatten)]
    pub models: ModelArgs,
    /// Score published raw deltas from a table file instead of embeddings.
    #[arg(long, value_name = "FILE")]
    pub fixture: Option<PathBuf>,
    /// Output file (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "fixed4")]
    pub precision: PrecisionArg,
    /// Store the batch statistics for single-sample scoring.
    #[arg(long)]
    pub save_baseline: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub criterion: String,
    /// Labels CSV to compare against (default: labels in the knowledge base).
    #[arg(long, value_name = "FILE")]
    pub against: Option<PathBuf>,
    /// Score table CSV to evaluate (default: latest stored table).
    #[arg(long, value_name = "FILE")]
    pub table: Option<PathBuf>,
    /// Relabel with this threshold before counting.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    /// Similarity to the positive prompt.
    Positive,
    /// Positive minus negative prompt similarity.
    Delta,
}

impl From<ModeArg> for RankMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Positive => RankMode::Positive,
            ModeArg::Delta => RankMode::Delta,
        }
    }
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Comma-separated criterion ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub criteria: Vec<String>,
    /// Average the prompts of all listed criteria.
    #[arg(long)]
    pub cumulative: bool,
    #[arg(long, value_parser = parse_from_str::<PromptVariant>, default_value = "plain")]
    pub variant: PromptVariant,
    #[arg(long, default_value = "clip")]
    pub model: String,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "positive")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "fixed4")]
    pub precision: PrecisionArg,
}

#[derive(Debug, Args)]
pub struct TreeArgs {
    /// Sample to qualify.
    #[arg(long, required_unless_present = "all", conflicts_with = "all")]
    pub sample: Option<String>,
    /// Qualify every sample and print a summary.
    #[arg(long)]
    pub all: bool,
    /// Criterion order (default EA3,EA1,EA2,EA4,EA5,EA6).
    #[arg(long, value_delimiter = ',')]
    pub order: Option<Vec<String>>,
    /// Gate criteria whose failure rejects immediately (default EA3; pass
    /// an empty value for none).
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub gates: Option<Vec<String>>,
    #[arg(long)]
    pub stop_at_first_failure: bool,
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExportWhat {
    /// Raw vision vectors with sample ids, for external 2-D plotting.
    Projection,
    /// Precision@k table over criteria, variants, models and k.
    Report,
    /// Latest stored score table of a criterion.
    Scores,
    /// Pairwise cosine matrix of the vision corpus.
    Matrix,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_enum)]
    pub what: ExportWhat,
    /// Model for projection and matrix exports.
    #[arg(long, default_value = "flava")]
    pub model: String,
    /// Criterion for score exports.
    #[arg(long)]
    pub criterion: Option<String>,
    /// Criteria for the report (default EA1..EA6).
    #[arg(long, value_delimiter = ',')]
    pub criteria: Option<Vec<String>>,
    /// Add cumulative rows EA1+EA2, EA1+EA2+EA3, ... to the report.
    #[arg(long)]
    pub cumulative: bool,
    /// Models for the report.
    #[arg(long, value_delimiter = ',', default_value = "clip,flava")]
    pub models: Vec<String>,
    /// Prompt variants for the report.
    #[arg(long, value_delimiter = ',', value_parser = parse_from_str::<PromptVariant>, default_value = "plain")]
    pub variants: Vec<PromptVariant>,
    /// Cut-offs for the report.
    #[arg(long, value_delimiter = ',', default_value = "5,10,15")]
    pub k: Vec<usize>,
    #[arg(long, value_enum, default_value = "positive")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "fixed4")]
    pub precision: PrecisionArg,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    /// Directory to write into (created if missing).
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn parse_from_str<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_weights(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated numbers")?;
    let parse = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "error",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Op(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
