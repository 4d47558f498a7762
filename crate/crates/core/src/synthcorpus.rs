//! Seeded synthetic CT reports with known gold labels, and a scripted oracle
//! backend that answers the question form from those labels with
//! controllable per-question noise.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::CorpusEntry;
use crate::form_parser::render_filled_form;
use crate::llm_client::{LlmError, Responder};
use crate::normalize::canonical_answers;
use crate::prompting::embedded_report_id;
use crate::schema::{Findings, GoldLabel, LocationCategory, QuestionId, Report};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("noise probability for question {0} must be in [0, 1], got {1}")]
    InvalidProbability(QuestionId, f64),
    #[error("n_reports must be positive")]
    NoReports,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageStyle {
    #[default]
    Plain,
    Chatty,
}

impl std::str::FromStr for LanguageStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(LanguageStyle::Plain),
            "chatty" => Ok(LanguageStyle::Chatty),
            other => Err(format!("unknown language style {other:?}")),
        }
    }
}

pub type NoiseMap = BTreeMap<QuestionId, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_reports: usize,
    #[serde(default)]
    pub noise: NoiseMap,
    #[serde(default)]
    pub language_style: LanguageStyle,
}

impl GenConfig {
    pub fn new(seed: u64, n_reports: usize) -> Self {
        GenConfig {
            seed,
            n_reports,
            noise: NoiseMap::new(),
            language_style: LanguageStyle::Plain,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.n_reports == 0 {
            return Err(GenError::NoReports);
        }
        validate_noise(&self.noise)
    }
}

pub fn validate_noise(noise: &NoiseMap) -> Result<(), GenError> {
    for (&q, &p) in noise {
        if !(0.0..=1.0).contains(&p) {
            return Err(GenError::InvalidProbability(q, p));
        }
    }
    Ok(())
}

fn sample_findings(rng: &mut ChaCha8Rng) -> Findings {
    let mut f = Findings::empty();
    f.location = *LocationCategory::ALL.choose(rng).unwrap();
    if rng.gen_bool(0.92) {
        let long = rng.gen_range(5..=60u32);
        f.long_diameter_mm = Some(f64::from(long));
        if rng.gen_bool(0.9) {
            f.short_diameter_mm = Some(f64::from(rng.gen_range(3..=long.max(3))));
        }
    }
    match rng.gen_range(0..20) {
        0..=7 => f.solid = true,
        8..=12 => f.ground_glass = true,
        13..=17 => f.mixed_ground_glass = true,
        _ => {}
    }
    f.spiculation = rng.gen_bool(0.4);
    f.lobulation = rng.gen_bool(0.4);
    f.pleural_invasion = rng.gen_bool(0.35);
    f.mediastinal_ln_enlarged = rng.gen_bool(0.3);
    f.hilar_ln_enlarged = rng.gen_bool(0.3);
    f
}

fn location_phrase(rng: &mut ChaCha8Rng, location: LocationCategory) -> &'static str {
    use LocationCategory::*;
    let options: &[&str] = match location {
        RightUpperLobe => &[
            "the right upper lobe",
            "the apical segment of the right upper lobe",
        ],
        RightMiddleLobe => &[
            "the right middle lobe",
            "the lateral segment of the right middle lobe",
        ],
        RightLowerLobe => &[
            "the right lower lobe",
            "the posterior basal segment of the right lower lobe",
        ],
        LeftUpperLobe => &[
            "the left upper lobe",
            "the apicoposterior segment of the left upper lobe",
        ],
        LeftLowerLobe => &[
            "the left lower lobe",
            "the dorsal segment of the left lower lobe",
        ],
        Other => &[
            "the right hilar region",
            "the lingula",
            "the region adjacent to the left main bronchus",
        ],
    };
    options.choose(rng).unwrap()
}

fn lesion_noun(rng: &mut ChaCha8Rng, f: &Findings) -> &'static str {
    let options: &[&str] = if f.solid {
        &["a solid nodule", "a solid mass"]
    } else if f.ground_glass {
        &["a pure ground-glass nodule", "a ground-glass opacity"]
    } else if f.mixed_ground_glass {
        &["a mixed ground-glass nodule", "a part-solid nodule"]
    } else {
        &["a nodular lesion", "a mass"]
    };
    options.choose(rng).unwrap()
}

fn size_phrase(rng: &mut ChaCha8Rng, f: &Findings) -> Option<String> {
    let long = f.long_diameter_mm?;
    let in_cm = rng.gen_bool(0.6);
    let fmt = |mm: f64| {
        if in_cm {
            format!("{:.1}", mm / 10.0)
        } else {
            format!("{mm:.0}")
        }
    };
    let unit = if in_cm { "cm" } else { "mm" };
    Some(match f.short_diameter_mm {
        Some(short) => format!(
            "measuring approximately {} x {} {unit}",
            fmt(long),
            fmt(short)
        ),
        None => format!(
            "measuring approximately {} {unit} in greatest dimension",
            fmt(long)
        ),
    })
}

/// Report text realizing `f`; wording varies with `rng`.
fn render_report_text(rng: &mut ChaCha8Rng, f: &Findings) -> String {
    let mut sentences = Vec::new();
    let noun = lesion_noun(rng, f);
    let place = location_phrase(rng, f.location);
    match size_phrase(rng, f) {
        Some(size) => sentences.push(format!("There is {noun} in {place}, {size}.")),
        None => sentences.push(format!("There is {noun} in {place}.")),
    }
    sentences.push(
        if f.spiculation {
            *[
                "Spiculated margins are seen.",
                "The margin shows spiculation.",
            ]
            .choose(rng)
            .unwrap()
        } else {
            *[
                "No spiculation is seen.",
                "The margin is smooth without spicules.",
            ]
            .choose(rng)
            .unwrap()
        }
        .to_string(),
    );
    sentences.push(
        if f.lobulation {
            *["The lesion is lobulated.", "A lobulated contour is noted."]
                .choose(rng)
                .unwrap()
        } else {
            *["No lobulation is noted.", "The contour is not lobulated."]
                .choose(rng)
                .unwrap()
        }
        .to_string(),
    );
    sentences.push(
        if f.pleural_invasion {
            *[
                "Pleural indentation is present.",
                "The lesion abuts and retracts the adjacent pleura.",
            ]
            .choose(rng)
            .unwrap()
        } else {
            *[
                "The adjacent pleura is intact.",
                "No pleural indentation is seen.",
            ]
            .choose(rng)
            .unwrap()
        }
        .to_string(),
    );
    sentences.push(
        if f.mediastinal_ln_enlarged {
            "Enlarged mediastinal lymph nodes are present."
        } else {
            "No enlarged mediastinal lymph nodes are seen."
        }
        .to_string(),
    );
    sentences.push(
        if f.hilar_ln_enlarged {
            *[
                "Enlarged hilar lymph nodes are seen.",
                "Mediastinal group 10 lymph nodes are enlarged.",
            ]
            .choose(rng)
            .unwrap()
        } else {
            "No enlarged hilar lymph nodes."
        }
        .to_string(),
    );
    let closing = [
        "No pleural effusion.",
        "The heart size is normal.",
        "No other abnormality is found.",
    ];
    sentences.push(closing.choose(rng).unwrap().to_string());
    sentences.join(" ")
}

/// Seeded synthetic reports with their gold labels.
pub fn generate_corpus(config: &GenConfig) -> Result<Vec<(Report, GoldLabel)>, GenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.n_reports.to_string().len().max(4);
    Ok((0..config.n_reports)
        .map(|i| {
            let id = format!("SYN-{:0width$}", i + 1);
            let findings = sample_findings(&mut rng);
            let text = render_report_text(&mut rng, &findings);
            let gold = GoldLabel::new(id.clone(), findings).expect("sampled findings are valid");
            (Report { id, text }, gold)
        })
        .collect())
}

pub fn to_corpus_entries(pairs: &[(Report, GoldLabel)]) -> Vec<CorpusEntry> {
    pairs
        .iter()
        .map(|(r, g)| CorpusEntry {
            id: r.id.clone(),
            text: r.text.clone(),
            gold: Some(g.findings.clone()),
        })
        .collect()
}

fn report_seed(seed: u64, report_id: &str) -> u64 {
    let digest = Sha256::digest(report_id.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    seed ^ u64::from_le_bytes(bytes)
}

/// Applies per-question noise to a copy of `gold`.
///
/// One uniform draw is taken per question regardless of its probability so
/// that noise on one question never shifts the draws of another.
pub fn perturb(gold: &Findings, noise: &NoiseMap, rng: &mut ChaCha8Rng) -> Findings {
    let mut out = gold.clone();
    for q in QuestionId::all() {
        let draw: f64 = rng.gen();
        let aux: u32 = rng.gen();
        let p = noise.get(&q).copied().unwrap_or(0.0);
        if draw >= p {
            continue;
        }
        match q.get() {
            1 => {
                let others: Vec<LocationCategory> = LocationCategory::ALL
                    .into_iter()
                    .filter(|&c| c != gold.location)
                    .collect();
                out.location = others[aux as usize % others.len()];
            }
            2 | 3 => {
                let field = if q.get() == 2 {
                    &mut out.long_diameter_mm
                } else {
                    &mut out.short_diameter_mm
                };
                *field = Some(match *field {
                    Some(v) if aux.is_multiple_of(2) => v * 1.1,
                    Some(v) => v * 0.9,
                    None => f64::from(5 + aux % 26),
                });
            }
            _ => {
                let flag = out.flag_mut(q).expect("boolean question");
                *flag = !*flag;
            }
        }
    }
    out
}

const PREAMBLES: [&str; 3] = [
    "Sure! Here is the filled question form based on the CT report:",
    "Based on the provided CT report, I have filled in the form as follows.",
    "Certainly. Below are the answers extracted from the report.",
];

const EPILOGUES: [&str; 3] = [
    "Please note that these answers are based solely on the information given in the CT report.",
    "Let me know if you need any further clarification.",
    "If any item is unclear, please consult the radiologist.",
];

/// Response text for one report: the filled form, optionally wrapped in chat.
pub fn oracle_response(
    report_id: &str,
    gold: &Findings,
    noise: &NoiseMap,
    seed: u64,
    style: LanguageStyle,
) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(report_seed(seed, report_id));
    let answers = perturb(gold, noise, &mut rng);
    let form = render_filled_form(&canonical_answers(&answers));
    match style {
        LanguageStyle::Plain => form,
        LanguageStyle::Chatty => {
            let pre = PREAMBLES.choose(&mut rng).unwrap();
            let post = EPILOGUES.choose(&mut rng).unwrap();
            format!("{pre}\n\n{form}\n\n{post}")
        }
    }
}

/// Response function answering prompts for the reports in `gold_by_id`.
pub fn scripted_oracle(
    gold_by_id: HashMap<String, Findings>,
    noise: NoiseMap,
    seed: u64,
    style: LanguageStyle,
) -> Result<Responder, GenError> {
    validate_noise(&noise)?;
    let gold_by_id = Arc::new(gold_by_id);
    Ok(Arc::new(move |prompt: &str| {
        let id = embedded_report_id(prompt)
            .ok_or_else(|| LlmError::UnknownReport("<no report id header>".into()))?;
        let gold = gold_by_id
            .get(id)
            .ok_or_else(|| LlmError::UnknownReport(id.to_string()))?;
        Ok(oracle_response(id, gold, &noise, seed, style))
    }))
}

pub fn gold_map<'a>(golds: impl IntoIterator<Item = &'a GoldLabel>) -> HashMap<String, Findings> {
    golds
        .into_iter()
        .map(|g| (g.report_id.clone(), g.findings.clone()))
        .collect()
}
