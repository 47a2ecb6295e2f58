use std::path::PathBuf;

use attriq_core::similarity::{AggregationMode, Measure};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ProviderKind;

#[derive(Debug, Parser)]
#[command(name = "attriq", version, about = "Document image retrieval with attribute-prompted query images")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build or inspect a feature index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Synthesize query images for attribute queries.
    Generate(GenerateArgs),
    /// Rank the indexed documents against one query.
    Query(QueryArgs),
    /// Score backends × measures over a labeled query set.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    Build(BuildArgs),
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Corpus manifest (JSONL).
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// `test`, a descriptor file, or the id of a configured backend.
    #[arg(long)]
    pub backend: String,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, value_name = "PATH")]
    pub index: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Aggregation {
    Mean,
    Min,
}

impl From<Aggregation> for AggregationMode {
    fn from(a: Aggregation) -> Self {
        match a {
            Aggregation::Mean => AggregationMode::Mean,
            Aggregation::Min => AggregationMode::Min,
        }
    }
}

fn parse_measure(s: &str) -> Result<Measure, String> {
    s.parse::<Measure>().map_err(|e| e.to_string())
}

/// Where a query comes from, other than a ready-made image.
#[derive(Debug, Clone, Args)]
pub struct PromptSource {
    /// Attribute that must be present (repeatable).
    #[arg(long = "positive", value_name = "NAME")]
    pub positives: Vec<String>,
    /// Attribute that must be absent (repeatable).
    #[arg(long = "negative", value_name = "NAME")]
    pub negatives: Vec<String>,
    /// JSONL query set.
    #[arg(long, value_name = "PATH")]
    pub query_file: Option<PathBuf>,
    /// Pick one query from `--query-file`.
    #[arg(long, value_name = "ID")]
    pub query_id: Option<String>,
    /// Literal prompt instead of an attribute query.
    #[arg(long, value_name = "TEXT")]
    pub prompt: Option<String>,
    #[arg(long, value_name = "TEXT", requires = "prompt")]
    pub negative_prompt: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerationArgs {
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Attribute vocabulary (JSON).
    #[arg(long, value_name = "PATH")]
    pub vocabulary: Option<PathBuf>,
    #[arg(long, value_name = "TEXT")]
    pub preamble: Option<String>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    /// Directory for cached candidates.
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub source: PromptSource,
    #[command(flatten)]
    pub generation: GenerationArgs,
    /// Images per query.
    #[arg(long, default_value_t = 1)]
    pub n: u32,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long, value_name = "PATH")]
    pub index: Option<PathBuf>,
    /// Needed unless the index was built with the `test` backend or a
    /// configured one.
    #[arg(long)]
    pub backend: Option<String>,
    /// Query-by-example with an existing image.
    #[arg(long, value_name = "PATH")]
    pub image: Option<PathBuf>,
    #[command(flatten)]
    pub source: PromptSource,
    #[command(flatten)]
    pub generation: GenerationArgs,
    #[arg(long, value_parser = parse_measure, default_value = "l2")]
    pub measure: Measure,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub num_candidates: u32,
    #[arg(long, value_enum, default_value = "mean")]
    pub aggregation: Aggregation,
    /// Candidate indices to use (0-based, comma separated).
    #[arg(long, value_delimiter = ',')]
    pub select: Option<Vec<usize>>,
    /// Corpus manifest, to report image URIs.
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: OutputFormat,
    /// Print per-step timings to stderr.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of index files; every file with the index magic is used.
    #[arg(long, value_name = "DIR")]
    pub index_dir: Option<PathBuf>,
    /// Individual index files (repeatable).
    #[arg(long = "index", value_name = "PATH")]
    pub indexes: Vec<PathBuf>,
    /// Backends for indexes not built with `test` (repeatable).
    #[arg(long = "backend")]
    pub backends: Vec<String>,
    #[arg(long, value_name = "PATH")]
    pub queries: PathBuf,
    /// Labeled corpus manifest.
    #[arg(long, value_name = "PATH")]
    pub truth: PathBuf,
    /// Output file; format from the extension (.csv, .md, .json).
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    #[arg(long, value_parser = parse_measure, value_delimiter = ',', default_value = "l1,l2,cosine")]
    pub measures: Vec<Measure>,
    /// Use `<query_id>-<n>.<ext>` images from here instead of generating.
    #[arg(long, value_name = "DIR")]
    pub query_images: Option<PathBuf>,
    #[command(flatten)]
    pub generation: GenerationArgs,
    #[arg(long, default_value_t = 1)]
    pub num_candidates: u32,
    #[arg(long, value_enum, default_value = "mean")]
    pub aggregation: Aggregation,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, value_name = "PATH")]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub backend: Option<String>,
    /// Corpus manifest: document images and ground truth.
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub generation: GenerationArgs,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
}
