use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use extraction_audit::distance::DistanceKind;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "extraction-audit", version, about = "Probabilistic extraction audits for autoregressive models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Beam-search audit of every record: bounds on near-verbatim mass per ε.
    Run(RunArgs),
    /// Monte Carlo estimate of near-verbatim mass per record.
    Mc(McArgs),
    /// Exact mass by full enumeration of the top-k tree (small k and T only).
    Oracle(OracleArgs),
    /// Repeat the audit over several beam widths or budgets.
    Sweep(SweepArgs),
    /// Monte Carlo sample sizes for detection or relative precision.
    Samplesize(SampleSizeArgs),
    /// Cut a text file into prefix/suffix records.
    Chunk(ChunkArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ProviderArgs {
    /// Synthetic model spec (JSON file), or `remote` to use --endpoint.
    #[arg(long)]
    pub provider: String,
    /// Logits server base URL.
    #[arg(long, env = "EXTRACTION_AUDIT_ENDPOINT")]
    pub endpoint: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Records file (JSONL).
    #[arg(long, required_unless_present = "text", conflicts_with = "text")]
    pub records: Option<PathBuf>,
    /// Raw UTF-8 text, chunked on the fly.
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TokenizerKind::Whitespace)]
    pub tokenizer: TokenizerKind,
    /// Window stride in bytes for --text.
    #[arg(long, default_value_t = 20)]
    pub stride: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    Byte,
    Whitespace,
}

#[derive(Args, Debug, Clone)]
pub struct DecodeArgs {
    #[arg(long, default_value_t = 40)]
    pub top_k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 50)]
    pub prefix_len: usize,
    #[arg(long, default_value_t = 50)]
    pub suffix_len: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Baseline,
    Ham,
    Lev,
}

#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    #[arg(long, default_value_t = 20)]
    pub beam_width: usize,
    #[arg(long, value_enum, default_value_t = VariantKind::Lev)]
    pub variant: VariantKind,
    /// Distance for filtering baseline finals (pruned variants use their own).
    #[arg(long, default_value = "lev")]
    pub dist: DistanceKind,
    /// Largest budget; masses are reported for 0..=ε.
    #[arg(long, default_value_t = 5)]
    pub epsilon: usize,
    #[arg(long, default_value_t = 0.001)]
    pub tau_min: f64,
    /// Abandon a search once no live path can still reach τ_min.
    #[arg(long)]
    pub early_stop: bool,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Discard an existing checkpoint instead of resuming from it.
    #[arg(long)]
    pub fresh: bool,
}

#[derive(Args, Debug)]
pub struct McArgs {
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 1000)]
    pub samples: u64,
    #[arg(long, default_value = "lev")]
    pub dist: DistanceKind,
    #[arg(long, default_value_t = 5)]
    pub epsilon: usize,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value = "lev")]
    pub dist: DistanceKind,
    #[arg(long, default_value_t = 5)]
    pub epsilon: usize,
    /// Refuse trees with more leaves than this.
    #[arg(long, default_value_t = extraction_audit::estimators::DEFAULT_MAX_LEAVES)]
    pub max_leaves: f64,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Beam widths to compare, e.g. 20,30,40.
    #[arg(long, value_delimiter = ',', required_unless_present = "epsilons", conflicts_with = "epsilons")]
    pub beam_widths: Vec<usize>,
    /// Budgets to compare, e.g. 0,1,2,5.
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct SampleSizeArgs {
    /// Per-sample hit probability.
    #[arg(long)]
    pub p: f64,
    /// Allowed probability of seeing no hit at all.
    #[arg(long, required_unless_present = "eta", conflicts_with = "eta")]
    pub delta: Option<f64>,
    /// Target relative standard error.
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ChunkArgs {
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long, value_enum, default_value_t = TokenizerKind::Whitespace)]
    pub tokenizer: TokenizerKind,
    /// Vocabulary size for the whitespace tokenizer.
    #[arg(long, default_value_t = 50_000)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 50)]
    pub prefix_len: usize,
    #[arg(long, default_value_t = 50)]
    pub suffix_len: usize,
    #[arg(long, default_value_t = 20)]
    pub stride: usize,
    /// Source label (default: file name).
    #[arg(long)]
    pub source: Option<String>,
    /// Output records file (JSONL).
    #[arg(long)]
    pub out: PathBuf,
}
