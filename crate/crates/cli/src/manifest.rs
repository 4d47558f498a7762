use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use radx_core::synthcorpus::{LanguageStyle, NoiseMap};
use radx_core::{BackendConfig, DensityPriority};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EXCHANGES_FILE: &str = "exchanges.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

/// Everything needed to re-run an extraction in replay mode against the
/// run's own `exchanges.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub created_at: DateTime<Utc>,
    pub corpus_path: PathBuf,
    pub template_name: String,
    pub template_path: Option<PathBuf>,
    /// Full template text, so runs with edited template files stay replayable.
    pub template_source: String,
    pub backend: BackendConfig,
    pub density_priority: DensityPriority,
    pub tolerance_mm: f64,
    pub fuzzy_threshold: f64,
    pub parallelism: usize,
    pub seed: u64,
    pub noise: NoiseMap,
    pub style: LanguageStyle,
    pub n_reports: usize,
    pub n_records: usize,
    pub n_failed: usize,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
