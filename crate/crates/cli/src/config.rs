//! Option resolution: command-line flags, then environment, then the TOML
//! config file, then built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use radx_core::prompting::{builtin_template, load_template, BuiltinTemplate, PromptTemplate};
use radx_core::synthcorpus::{LanguageStyle, NoiseMap};
use radx_core::{BackendMode, QuestionId};

pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Default, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub template: Option<String>,
    pub backend: Option<BackendMode>,
    pub cassette: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_retries: Option<u32>,
    pub retry_backoff_ms: Option<u64>,
    pub strict_replay: Option<bool>,
    pub parallelism: Option<usize>,
    pub tolerance_mm: Option<f64>,
    pub density_priority: Option<String>,
    pub fuzzy_threshold: Option<f64>,
    pub seed: Option<u64>,
    pub style: Option<LanguageStyle>,
    /// Question number to flip probability, e.g. `noise = { "7" = 0.2 }`.
    #[serde(default)]
    pub noise: BTreeMap<String, f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(FileConfig::default()), FileConfig::load)
    }

    pub fn noise_map(&self) -> Result<NoiseMap> {
        self.noise
            .iter()
            .map(|(q, p)| Ok((parse_question(q)?, *p)))
            .collect()
    }
}

/// Source of environment lookups, swappable in tests.
pub trait Env {
    fn var(&self, key: &str) -> Option<String>;
}

pub struct ProcessEnv;

impl Env for ProcessEnv {
    fn var(&self, key: &str) -> Option<String> {
        std::env::var(key).ok().filter(|v| !v.is_empty())
    }
}

impl Env for BTreeMap<String, String> {
    fn var(&self, key: &str) -> Option<String> {
        self.get(key).cloned()
    }
}

fn parse_question(s: &str) -> Result<QuestionId> {
    let digits = s.trim().trim_start_matches(['q', 'Q']);
    let n: u8 = digits
        .parse()
        .with_context(|| format!("invalid question number {s:?}"))?;
    QuestionId::new(n).with_context(|| format!("invalid question number {s:?}"))
}

/// Parses one `Q=p` noise flag, where `Q` is a question number with optional `q` prefix.
pub fn parse_noise_flag(s: &str) -> Result<(QuestionId, f64)> {
    let Some((q, p)) = s.split_once('=') else {
        bail!("noise must look like 7=0.2, got {s:?}");
    };
    let p: f64 = p
        .trim()
        .parse()
        .with_context(|| format!("invalid noise probability in {s:?}"))?;
    Ok((parse_question(q)?, p))
}

/// `base`, `pmk`, or a path to a template file.
pub fn resolve_template(spec: &str) -> Result<(PromptTemplate, Option<PathBuf>)> {
    if let Some(builtin) = BuiltinTemplate::from_name(spec) {
        return Ok((builtin_template(builtin), None));
    }
    let path = PathBuf::from(spec);
    let template =
        load_template(&path).with_context(|| format!("loading template {}", path.display()))?;
    Ok((template, Some(path)))
}
