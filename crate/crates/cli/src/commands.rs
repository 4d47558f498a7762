use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use radx_core::corpus::{gold_labels, read_corpus, write_corpus};
use radx_core::eval::{
    compare_metrics, consistency, evaluate, render_comparison_table, render_consistency_table,
    render_metrics_table, DEFAULT_TOLERANCE_MM,
};
use radx_core::form_parser::DEFAULT_FUZZY_THRESHOLD;
use radx_core::llm_client::{LlmError, Responder, CASSETTE_ENV};
use radx_core::prompting::render_prompt;
use radx_core::synthcorpus::{
    generate_corpus, gold_map, scripted_oracle, to_corpus_entries, GenConfig, LanguageStyle,
    NoiseMap,
};
use radx_core::{
    BackendConfig, BackendMode, DensityPriority, Exchange, FormParser, LlmClient, MetricsReport,
    Normalizer, Pipeline, PromptTemplate, StructuredRecord,
};

use crate::args::{
    Cli, Command, CompareArgs, ConsistencyArgs, EvalArgs, ExtractArgs, GenCorpusArgs,
};
use crate::config::{parse_noise_flag, resolve_template, Env, FileConfig, DEFAULT_PARALLELISM};
use crate::manifest::{
    RunManifest, ERRORS_FILE, EXCHANGES_FILE, MANIFEST_FILE, METRICS_FILE, RECORDS_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some reports failed; the rest were written.
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 2,
        }
    }
}

/// One line of `errors.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorLine {
    pub report_id: String,
    pub stage: String,
    pub message: String,
}

pub fn run(cli: Cli, env: &dyn Env) -> Result<Outcome> {
    let file = FileConfig::load_optional(cli.config.as_deref())?;
    match cli.command {
        Command::Extract(args) => extract(args, env, &file),
        Command::Eval(args) => eval(args, &file),
        Command::Consistency(args) => consistency_cmd(args),
        Command::Compare(args) => compare(args),
        Command::GenCorpus(args) => gen_corpus(args, &file),
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
        .with_context(|| format!("writing {}", path.display()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", path.display(), idx + 1))?;
        items.push(item);
    }
    Ok(items)
}

/// Fully resolved extraction settings.
struct ExtractPlan {
    corpus_path: PathBuf,
    template: PromptTemplate,
    template_path: Option<PathBuf>,
    backend: BackendConfig,
    priority: DensityPriority,
    tolerance_mm: f64,
    fuzzy_threshold: f64,
    parallelism: usize,
    seed: u64,
    noise: NoiseMap,
    style: LanguageStyle,
}

impl ExtractPlan {
    /// Flags, then environment, then the earlier run's manifest (with
    /// `--from-run`), then the config file, then defaults.
    fn resolve(
        args: ExtractArgs,
        env: &dyn Env,
        file: &FileConfig,
        prior: Option<(&Path, &RunManifest)>,
    ) -> Result<Self> {
        let manifest = prior.map(|(_, m)| m);
        let corpus_path = args
            .corpus
            .or_else(|| manifest.map(|m| m.corpus_path.clone()))
            .context("--corpus is required")?;

        let (template, template_path) = match (&args.template, manifest, &file.template) {
            (Some(spec), _, _) => resolve_template(spec)?,
            (None, Some(m), _) => (
                PromptTemplate::parse(m.template_name.clone(), &m.template_source)
                    .context("template stored in manifest")?,
                m.template_path.clone(),
            ),
            (None, None, Some(spec)) => resolve_template(spec)?,
            (None, None, None) => resolve_template("base")?,
        };

        let prior_backend = manifest.map(|m| &m.backend);
        let mode = args
            .backend
            .or(prior.map(|_| BackendMode::Replay))
            .or(file.backend)
            .unwrap_or(BackendMode::Live);
        let cassette = args
            .cassette
            .clone()
            .or_else(|| env.var(CASSETTE_ENV).map(PathBuf::from))
            .or_else(|| prior.map(|(dir, _)| dir.join(EXCHANGES_FILE)))
            .or_else(|| file.cassette.clone());
        let defaults = BackendConfig::new(mode);
        let backend = BackendConfig {
            mode,
            endpoint_url: args
                .endpoint
                .or_else(|| prior_backend.and_then(|b| b.endpoint_url.clone()))
                .or_else(|| file.endpoint.clone()),
            model_name: args
                .model
                .or_else(|| prior_backend.and_then(|b| b.model_name.clone()))
                .or_else(|| file.model.clone()),
            temperature: args
                .temperature
                .or_else(|| prior_backend.and_then(|b| b.temperature))
                .or(file.temperature),
            max_retries: args
                .max_retries
                .or(file.max_retries)
                .unwrap_or(defaults.max_retries),
            retry_backoff_ms: args
                .retry_backoff_ms
                .or(file.retry_backoff_ms)
                .unwrap_or(defaults.retry_backoff_ms),
            cassette_path: cassette,
            strict_replay: args
                .strict_replay
                .or(file.strict_replay)
                .unwrap_or(defaults.strict_replay),
        };

        let priority = match (args.density_priority, manifest, &file.density_priority) {
            (Some(p), _, _) => p,
            (None, Some(m), _) => m.density_priority,
            (None, None, Some(s)) => s.parse().context("density_priority in config")?,
            (None, None, None) => DensityPriority::default(),
        };
        let noise = if !args.noise.is_empty() {
            args.noise
                .iter()
                .map(|s| parse_noise_flag(s))
                .collect::<Result<NoiseMap>>()?
        } else if let Some(m) = manifest {
            m.noise.clone()
        } else {
            file.noise_map()?
        };

        let plan = ExtractPlan {
            corpus_path,
            template,
            template_path,
            backend,
            priority,
            tolerance_mm: args
                .tolerance_mm
                .or(manifest.map(|m| m.tolerance_mm))
                .or(file.tolerance_mm)
                .unwrap_or(DEFAULT_TOLERANCE_MM),
            fuzzy_threshold: args
                .fuzzy_threshold
                .or(manifest.map(|m| m.fuzzy_threshold))
                .or(file.fuzzy_threshold)
                .unwrap_or(DEFAULT_FUZZY_THRESHOLD),
            parallelism: args
                .parallelism
                .or(file.parallelism)
                .unwrap_or(DEFAULT_PARALLELISM),
            seed: args
                .seed
                .or(manifest.map(|m| m.seed))
                .or(file.seed)
                .unwrap_or(0),
            noise,
            style: args
                .style
                .or(manifest.map(|m| m.style))
                .or(file.style)
                .unwrap_or_default(),
        };
        plan.validate()?;
        Ok(plan)
    }

    fn validate(&self) -> Result<()> {
        ensure!(self.parallelism >= 1, "parallelism must be at least 1");
        ensure!(
            self.fuzzy_threshold > 0.0 && self.fuzzy_threshold <= 1.0,
            "fuzzy threshold must be in (0, 1], got {}",
            self.fuzzy_threshold
        );
        check_tolerance(self.tolerance_mm)
    }
}

fn check_tolerance(tol: f64) -> Result<()> {
    ensure!(
        tol.is_finite() && tol >= 0.0,
        "tolerance must be a non-negative number of millimeters, got {tol}"
    );
    Ok(())
}

pub fn extract(args: ExtractArgs, env: &dyn Env, file: &FileConfig) -> Result<Outcome> {
    let out = args.out.clone();
    let prior = args
        .from_run
        .clone()
        .map(|dir| RunManifest::load(&dir).map(|m| (dir, m)))
        .transpose()?;
    let plan = ExtractPlan::resolve(
        args,
        env,
        file,
        prior.as_ref().map(|(d, m)| (d.as_path(), m)),
    )?;

    let entries = read_corpus(&plan.corpus_path)
        .with_context(|| format!("corpus {}", plan.corpus_path.display()))?;
    ensure!(
        !entries.is_empty(),
        "corpus {} has no reports",
        plan.corpus_path.display()
    );

    let responder: Option<Responder> = if plan.backend.mode == BackendMode::Scripted {
        let golds =
            gold_labels(&entries).context("the scripted backend answers from gold labels")?;
        Some(scripted_oracle(
            gold_map(&golds),
            plan.noise.clone(),
            plan.seed,
            plan.style,
        )?)
    } else {
        None
    };
    let client = LlmClient::from_config(&plan.backend, responder)?;
    let pipeline = Pipeline::new(
        plan.template.clone(),
        FormParser::new(plan.fuzzy_threshold),
        Normalizer::new(
            radx_core::normalize::KeywordTable::english().clone(),
            plan.priority,
        ),
    );

    ensure!(
        !out.join(MANIFEST_FILE).exists(),
        "{} already holds a run; choose a fresh output directory",
        out.display()
    );
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.parallelism)
        .build()
        .context("building worker pool")?;
    let reports: Vec<_> = entries.iter().map(|e| e.report()).collect();
    log::info!(
        "extracting {} reports with {} workers",
        reports.len(),
        plan.parallelism
    );
    let mut completed: Vec<(String, Result<Exchange, LlmError>)> = pool.install(|| {
        reports
            .par_iter()
            .map(|r| {
                (
                    r.id.clone(),
                    client.complete(&render_prompt(r, pipeline.template())),
                )
            })
            .collect()
    });
    completed.sort_by(|a, b| a.0.cmp(&b.0));

    // raw responses hit disk before any interpretation
    write_jsonl(
        &out.join(EXCHANGES_FILE),
        completed.iter().filter_map(|(_, r)| r.as_ref().ok()),
    )?;

    let mut records: Vec<StructuredRecord> = Vec::new();
    let mut errors: Vec<ErrorLine> = Vec::new();
    for (id, result) in completed {
        let failure = match result {
            Ok(exchange) => match pipeline.interpret(&id, &exchange.response_body) {
                Ok((_, record)) => {
                    records.push(record);
                    continue;
                }
                Err(e) => ("extract_form", e.to_string()),
            },
            Err(e) => ("complete", e.to_string()),
        };
        log::warn!("report {id}: {}", failure.1);
        errors.push(ErrorLine {
            report_id: id,
            stage: failure.0.to_string(),
            message: failure.1,
        });
    }
    write_jsonl(&out.join(RECORDS_FILE), &records)?;
    write_jsonl(&out.join(ERRORS_FILE), &errors)?;

    let manifest = RunManifest {
        run_id: uuid::Uuid::new_v4().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        created_at: chrono::Utc::now(),
        corpus_path: std::fs::canonicalize(&plan.corpus_path).unwrap_or(plan.corpus_path),
        template_name: plan.template.name.clone(),
        template_path: plan.template_path,
        template_source: plan.template.to_file_string(),
        backend: plan.backend,
        density_priority: plan.priority,
        tolerance_mm: plan.tolerance_mm,
        fuzzy_threshold: plan.fuzzy_threshold,
        parallelism: plan.parallelism,
        seed: plan.seed,
        noise: plan.noise,
        style: plan.style,
        n_reports: reports.len(),
        n_records: records.len(),
        n_failed: errors.len(),
    };
    manifest.write(&out)?;

    println!(
        "extracted {}/{} reports into {} ({} failed)",
        records.len(),
        reports.len(),
        out.display(),
        errors.len()
    );
    Ok(if errors.is_empty() {
        Outcome::Success
    } else {
        Outcome::Partial
    })
}

pub fn eval(args: EvalArgs, file: &FileConfig) -> Result<Outcome> {
    let manifest = RunManifest::load(&args.run)?;
    let records: Vec<StructuredRecord> = read_jsonl(&args.run.join(RECORDS_FILE))?;
    let corpus_path = args.corpus.unwrap_or(manifest.corpus_path);
    let entries =
        read_corpus(&corpus_path).with_context(|| format!("corpus {}", corpus_path.display()))?;
    let golds: Vec<_> = entries.iter().filter_map(|e| e.gold_label()).collect();
    let tol = args
        .tolerance_mm
        .or(file.tolerance_mm)
        .unwrap_or(manifest.tolerance_mm);
    check_tolerance(tol)?;

    let failed = manifest.n_failed;
    if failed > 0 {
        eprintln!("warning: {failed} report(s) failed extraction and are not scored");
    }
    let report = evaluate(&records, &golds, tol)?;
    let out = args.out.unwrap_or_else(|| args.run.join(METRICS_FILE));
    std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{} reports, template {}, tolerance {} mm",
        report.n_reports, manifest.template_name, report.tolerance_mm
    );
    print!("{}", render_metrics_table(&report));
    Ok(Outcome::Success)
}

fn consistency_cmd(args: ConsistencyArgs) -> Result<Outcome> {
    if let Some(k) = args.k {
        ensure!(
            k == args.runs.len(),
            "--k {k} but {} run directories given",
            args.runs.len()
        );
    }
    ensure!(
        args.runs.len() >= 2,
        "consistency needs at least two run directories"
    );
    let runs: Vec<Vec<StructuredRecord>> = args
        .runs
        .iter()
        .map(|dir| read_jsonl(&dir.join(RECORDS_FILE)))
        .collect::<Result<_>>()?;
    let report = consistency(&runs)?;
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{}", render_consistency_table(&report));
    Ok(Outcome::Success)
}

fn metrics_label(path: &Path) -> String {
    let named_default = path.file_name().is_some_and(|n| n == METRICS_FILE);
    let source = if named_default {
        path.parent().and_then(Path::file_name)
    } else {
        path.file_stem()
    };
    source.map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn load_metrics(path: &Path) -> Result<MetricsReport> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn compare(args: CompareArgs) -> Result<Outcome> {
    let a = load_metrics(&args.metrics_a)?;
    let b = load_metrics(&args.metrics_b)?;
    let rows = compare_metrics(&a, &b).with_context(|| {
        format!(
            "comparing {} with {}",
            args.metrics_a.display(),
            args.metrics_b.display()
        )
    })?;
    if a.tolerance_mm != b.tolerance_mm {
        eprintln!(
            "warning: tolerances differ ({} mm vs {} mm)",
            a.tolerance_mm, b.tolerance_mm
        );
    }
    let label_a = args
        .label_a
        .unwrap_or_else(|| metrics_label(&args.metrics_a));
    let label_b = args
        .label_b
        .unwrap_or_else(|| metrics_label(&args.metrics_b));
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&rows)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{}", render_comparison_table(&rows, &label_a, &label_b));
    Ok(Outcome::Success)
}

fn gen_corpus(args: GenCorpusArgs, file: &FileConfig) -> Result<Outcome> {
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let pairs = generate_corpus(&GenConfig::new(seed, args.n_reports))?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_corpus(&to_corpus_entries(&pairs), &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} reports to {}", pairs.len(), args.out.display());
    Ok(Outcome::Success)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use clap::Parser;

    use super::*;

    fn extract_args(flags: &[&str]) -> ExtractArgs {
        let mut argv = vec!["radx", "extract", "--out", "run"];
        argv.extend_from_slice(flags);
        match Cli::parse_from(argv).command {
            Command::Extract(a) => a,
            _ => unreachable!(),
        }
    }

    fn env(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn file() -> FileConfig {
        toml::from_str(
            r#"
            template = "pmk"
            backend = "scripted"
            cassette = "file.jsonl"
            parallelism = 2
            seed = 11
            density_priority = "solid,ggo,mixed"
            "#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_apply_without_other_sources() {
        let plan = ExtractPlan::resolve(
            extract_args(&["--corpus", "c.jsonl"]),
            &env(&[]),
            &FileConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(plan.template.name, "base");
        assert_eq!(plan.backend.mode, BackendMode::Live);
        assert_eq!(plan.parallelism, DEFAULT_PARALLELISM);
        assert_eq!(plan.tolerance_mm, DEFAULT_TOLERANCE_MM);
        assert_eq!(plan.priority, DensityPriority::default());
        assert_eq!(plan.backend.cassette_path, None);
    }

    #[test]
    fn config_file_beats_defaults() {
        let plan = ExtractPlan::resolve(
            extract_args(&["--corpus", "c.jsonl"]),
            &env(&[]),
            &file(),
            None,
        )
        .unwrap();
        assert_eq!(plan.template.name, "pmk");
        assert_eq!(plan.backend.mode, BackendMode::Scripted);
        assert_eq!(plan.parallelism, 2);
        assert_eq!(plan.seed, 11);
        assert_eq!(plan.priority.to_string(), "solid,ggo,mixed");
        assert_eq!(plan.backend.cassette_path, Some("file.jsonl".into()));
    }

    #[test]
    fn environment_beats_config_file() {
        let plan = ExtractPlan::resolve(
            extract_args(&["--corpus", "c.jsonl"]),
            &env(&[(CASSETTE_ENV, "env.jsonl")]),
            &file(),
            None,
        )
        .unwrap();
        assert_eq!(plan.backend.cassette_path, Some("env.jsonl".into()));
    }

    #[test]
    fn flags_beat_everything() {
        let plan = ExtractPlan::resolve(
            extract_args(&[
                "--corpus",
                "c.jsonl",
                "--template",
                "base",
                "--backend",
                "replay",
                "--cassette",
                "flag.jsonl",
                "--parallelism",
                "8",
                "--seed",
                "3",
                "--density-priority",
                "ggo,mixed,solid",
            ]),
            &env(&[(CASSETTE_ENV, "env.jsonl")]),
            &file(),
            None,
        )
        .unwrap();
        assert_eq!(plan.template.name, "base");
        assert_eq!(plan.backend.mode, BackendMode::Replay);
        assert_eq!(plan.backend.cassette_path, Some("flag.jsonl".into()));
        assert_eq!(plan.parallelism, 8);
        assert_eq!(plan.seed, 3);
        assert_eq!(plan.priority.to_string(), "ggo,mixed,solid");
    }

    #[test]
    fn invalid_values_are_rejected() {
        for flags in [
            ["--parallelism", "0"],
            ["--fuzzy-threshold", "0"],
            ["--tolerance-mm=-1", "--seed=1"],
            ["--noise", "7=oops"],
        ] {
            let mut all = vec!["--corpus", "c.jsonl"];
            all.extend_from_slice(&flags);
            let res =
                ExtractPlan::resolve(extract_args(&all), &env(&[]), &FileConfig::default(), None);
            assert!(res.is_err(), "{flags:?}");
        }
    }

    #[test]
    fn missing_corpus_is_an_error() {
        let err = ExtractPlan::resolve(extract_args(&[]), &env(&[]), &FileConfig::default(), None)
            .err()
            .unwrap();
        assert!(err.to_string().contains("--corpus"));
    }
}
