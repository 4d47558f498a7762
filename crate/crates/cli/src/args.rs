use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use radx_core::synthcorpus::LanguageStyle;
use radx_core::{BackendMode, DensityPriority};

#[derive(Debug, Parser)]
#[command(
    name = "radx",
    version,
    about = "Extract structured lung-cancer findings from CT reports with a chat model"
)]
pub struct Cli {
    /// TOML config file; command-line flags and environment take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the extraction pipeline over a corpus and write a run directory.
    Extract(ExtractArgs),
    /// Score a run directory against gold labels.
    Eval(EvalArgs),
    /// Per-question agreement across repeated runs of the same corpus.
    Consistency(ConsistencyArgs),
    /// Side-by-side comparison of two metrics files.
    Compare(CompareArgs),
    /// Write a seeded synthetic corpus with gold labels.
    GenCorpus(GenCorpusArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// JSONL corpus of {"id", "text", "gold"?} objects.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// `base`, `pmk`, or a template file path.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub backend: Option<BackendMode>,
    /// Replay source in replay mode, recording target in live mode.
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Stored in the manifest as the default for `eval`.
    #[arg(long)]
    pub tolerance_mm: Option<f64>,
    /// Density label order, highest priority first, e.g. `mixed,ggo,solid`.
    #[arg(long)]
    pub density_priority: Option<DensityPriority>,
    #[arg(long)]
    pub fuzzy_threshold: Option<f64>,
    /// Seed for the scripted backend's noise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scripted flip noise `Q=p`; repeatable.
    #[arg(long, value_name = "Q=P")]
    pub noise: Vec<String>,
    /// Scripted response style.
    #[arg(long)]
    pub style: Option<LanguageStyle>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub retry_backoff_ms: Option<u64>,
    /// Fail on cassette misses instead of falling back to the live endpoint.
    #[arg(long)]
    pub strict_replay: Option<bool>,
    /// Reuse the settings of an earlier run and replay its exchanges.
    #[arg(long, value_name = "RUN_DIR")]
    pub from_run: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `extract`.
    #[arg(long)]
    pub run: PathBuf,
    /// Corpus with gold labels; defaults to the run's corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub tolerance_mm: Option<f64>,
    /// Metrics file; defaults to `metrics.json` inside the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    /// Run directory; give at least two.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    /// Expected number of runs.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub metrics_a: PathBuf,
    pub metrics_b: PathBuf,
    #[arg(long)]
    pub label_a: Option<String>,
    #[arg(long)]
    pub label_b: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub n_reports: usize,
}
