//! Rule-based post-processing of raw form answers into a [`StructuredRecord`].
//!
//! Location answers are mapped to lobes through side and lobe keywords,
//! diameters are unified to millimeters, the three density answers are made
//! mutually exclusive through a configurable priority, and the remaining
//! questions are read as yes/no. Keywords come from a [`KeywordTable`] so a
//! localized set can be swapped in.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::form_parser::{FilledForm, RawAnswer};
use crate::schema::{
    Findings, LocationCategory, QuestionId, StructuredRecord, WarningCode, QUESTION_COUNT,
};

const DEFAULT_KEYWORDS: &str = include_str!("../data/keywords_en.txt");

const REQUIRED_CATEGORIES: [&str; 8] = [
    "right",
    "left",
    "upper",
    "middle",
    "lower",
    "yes",
    "no",
    "not_mentioned",
];

#[derive(Debug, Error)]
pub enum NormalizeError {
    #[error("keyword table line {line}: {message}")]
    KeywordSyntax { line: usize, message: String },
    #[error("keyword table lacks category {0:?}")]
    MissingCategory(&'static str),
    #[error("invalid density priority {0:?}: expected a permutation of mixed, ggo, solid")]
    InvalidPriority(String),
    #[error("cannot read keyword table: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityLabel {
    MixedGroundGlass,
    GroundGlass,
    Solid,
}

impl DensityLabel {
    fn short(self) -> &'static str {
        match self {
            DensityLabel::MixedGroundGlass => "mixed",
            DensityLabel::GroundGlass => "ggo",
            DensityLabel::Solid => "solid",
        }
    }
}

/// Order in which tentatively-true density labels win; first is highest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DensityPriority([DensityLabel; 3]);

impl DensityPriority {
    pub fn new(order: [DensityLabel; 3]) -> Result<Self, NormalizeError> {
        let distinct = order[0] != order[1] && order[1] != order[2] && order[0] != order[2];
        if distinct {
            Ok(DensityPriority(order))
        } else {
            Err(NormalizeError::InvalidPriority(format!("{order:?}")))
        }
    }

    pub fn order(&self) -> [DensityLabel; 3] {
        self.0
    }

    /// All six orderings.
    pub fn all() -> Vec<DensityPriority> {
        use DensityLabel::*;
        let labels = [MixedGroundGlass, GroundGlass, Solid];
        let mut out = Vec::with_capacity(6);
        for a in labels {
            for b in labels {
                for c in labels {
                    if let Ok(p) = DensityPriority::new([a, b, c]) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

impl Default for DensityPriority {
    fn default() -> Self {
        DensityPriority([
            DensityLabel::MixedGroundGlass,
            DensityLabel::GroundGlass,
            DensityLabel::Solid,
        ])
    }
}

impl fmt::Display for DensityPriority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c] = self.0;
        write!(f, "{},{},{}", a.short(), b.short(), c.short())
    }
}

impl FromStr for DensityPriority {
    type Err = NormalizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let labels: Vec<DensityLabel> = s
            .split(',')
            .map(|p| match p.trim().to_ascii_lowercase().as_str() {
                "mixed" | "mixed_ground_glass" | "mixed-ground-glass" => {
                    Ok(DensityLabel::MixedGroundGlass)
                }
                "ggo" | "ground_glass" | "ground-glass" => Ok(DensityLabel::GroundGlass),
                "solid" => Ok(DensityLabel::Solid),
                _ => Err(NormalizeError::InvalidPriority(s.to_string())),
            })
            .collect::<Result<_, _>>()?;
        let order: [DensityLabel; 3] = labels
            .try_into()
            .map_err(|_| NormalizeError::InvalidPriority(s.to_string()))?;
        DensityPriority::new(order).map_err(|_| NormalizeError::InvalidPriority(s.to_string()))
    }
}

impl TryFrom<String> for DensityPriority {
    type Error = NormalizeError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<DensityPriority> for String {
    fn from(p: DensityPriority) -> String {
        p.to_string()
    }
}

/// Keyword groups used by the location and boolean rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordTable {
    groups: BTreeMap<String, Vec<String>>,
}

impl KeywordTable {
    pub fn english() -> &'static KeywordTable {
        static TABLE: OnceLock<KeywordTable> = OnceLock::new();
        TABLE.get_or_init(|| KeywordTable::parse(DEFAULT_KEYWORDS).expect("built-in keyword table"))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, NormalizeError> {
        KeywordTable::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses `category = keyword, keyword, ...` lines; `#` starts a comment.
    pub fn parse(source: &str) -> Result<Self, NormalizeError> {
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (idx, raw) in source.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (category, keywords) =
                line.split_once('=')
                    .ok_or_else(|| NormalizeError::KeywordSyntax {
                        line: idx + 1,
                        message: "expected `category = keyword, ...`".into(),
                    })?;
            let category = category.trim();
            if category.is_empty() {
                return Err(NormalizeError::KeywordSyntax {
                    line: idx + 1,
                    message: "empty category".into(),
                });
            }
            let entry = groups.entry(category.to_string()).or_default();
            entry.extend(
                keywords
                    .split(',')
                    .map(|k| k.trim().to_lowercase())
                    .filter(|k| !k.is_empty()),
            );
        }
        for required in REQUIRED_CATEGORIES {
            if groups.get(required).is_none_or(Vec::is_empty) {
                return Err(NormalizeError::MissingCategory(required));
            }
        }
        Ok(KeywordTable { groups })
    }

    fn keywords(&self, category: &str) -> &[String] {
        self.groups.get(category).map_or(&[], Vec::as_slice)
    }
}

/// Lowercased answer text with its word tokens, for keyword tests.
struct Scan {
    lower: String,
    words: Vec<String>,
}

impl Scan {
    fn new(text: &str) -> Self {
        let lower = text.to_lowercase();
        let words = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_string)
            .collect();
        Scan { lower, words }
    }

    fn is_word_keyword(keyword: &str) -> bool {
        keyword
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == ' ' || c == '-')
    }

    fn keyword_words(keyword: &str) -> Vec<&str> {
        keyword
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect()
    }

    /// Whole-word match for ASCII keywords, substring match otherwise.
    fn contains(&self, keyword: &str) -> bool {
        if !Scan::is_word_keyword(keyword) {
            return self.lower.contains(keyword);
        }
        let needle = Scan::keyword_words(keyword);
        !needle.is_empty()
            && self
                .words
                .windows(needle.len())
                .any(|w| w.iter().zip(&needle).all(|(a, b)| a == b))
    }

    fn starts_with(&self, keyword: &str) -> bool {
        if !Scan::is_word_keyword(keyword) {
            return self.lower.trim_start().starts_with(keyword);
        }
        let needle = Scan::keyword_words(keyword);
        !needle.is_empty()
            && self.words.len() >= needle.len()
            && self.words.iter().zip(&needle).all(|(a, b)| a == b)
    }

    fn any(&self, keywords: &[String]) -> bool {
        keywords.iter().any(|k| self.contains(k))
    }
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[0-9][0-9.]*|\.[0-9]+").unwrap())
}

fn dimension_step_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:x|×|\*|by)\s*(?:[0-9]+(?:\.[0-9]+)?|\.[0-9]+)").unwrap()
    })
}

fn unit_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:\S\s*){0,3}?(mm|millimet(?:er|re)s?|cm|centimet(?:er|re)s?)\b")
            .unwrap()
    })
}

/// Answer normalizer parameterized by keyword table and density priority.
#[derive(Debug, Clone)]
pub struct Normalizer {
    keywords: KeywordTable,
    priority: DensityPriority,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer::new(KeywordTable::english().clone(), DensityPriority::default())
    }
}

impl Normalizer {
    pub fn new(keywords: KeywordTable, priority: DensityPriority) -> Self {
        Normalizer { keywords, priority }
    }

    pub fn priority(&self) -> DensityPriority {
        self.priority
    }

    fn not_mentioned(&self, scan: &Scan) -> bool {
        scan.any(self.keywords.keywords("not_mentioned"))
    }

    pub fn normalize_location(&self, raw: &RawAnswer) -> LocationCategory {
        let Some(text) = raw.as_str() else {
            return LocationCategory::Other;
        };
        let scan = Scan::new(text);
        if self.not_mentioned(&scan) {
            return LocationCategory::Other;
        }
        let has = |cat: &str| scan.any(self.keywords.keywords(cat));
        let (right, left) = (has("right"), has("left"));
        let (upper, middle, lower) = (has("upper"), has("middle"), has("lower"));
        match (right, left) {
            (true, false) if upper => LocationCategory::RightUpperLobe,
            (true, false) if middle => LocationCategory::RightMiddleLobe,
            (true, false) if lower => LocationCategory::RightLowerLobe,
            (false, true) if upper => LocationCategory::LeftUpperLobe,
            (false, true) if lower => LocationCategory::LeftLowerLobe,
            _ => LocationCategory::Other,
        }
    }

    /// First number in the answer, in millimeters.
    ///
    /// A unit may follow the number directly, within three non-blank
    /// characters, or after a dimension chain such as `1.2 x 0.8 cm`.
    pub fn parse_length_mm(&self, raw: &RawAnswer, warnings: &mut Vec<WarningCode>) -> Option<f64> {
        let text = raw.as_str()?;
        if self.not_mentioned(&Scan::new(text)) {
            return None;
        }
        let m = number_re().find(text)?;
        let literal = m.as_str().trim_end_matches('.');
        if literal.matches('.').count() > 1 {
            warnings.push(WarningCode::NumericUnparseable);
            return None;
        }
        let value: f64 = match literal.parse() {
            Ok(v) => v,
            Err(_) => {
                warnings.push(WarningCode::NumericUnparseable);
                return None;
            }
        };
        let mut rest = &text[m.start() + literal.len()..];
        while let Some(step) = dimension_step_re().find(rest) {
            rest = &rest[step.end()..];
        }
        let mm = match unit_re().captures(rest) {
            Some(c) if c[1].to_ascii_lowercase().starts_with('c') => value * 10.0,
            Some(_) => value,
            None => {
                warnings.push(WarningCode::UnitAssumedMm);
                value
            }
        };
        if !(mm.is_finite() && mm > 0.0) {
            warnings.push(WarningCode::NumericUnparseable);
            return None;
        }
        Some(mm)
    }

    pub fn parse_bool(&self, raw: &RawAnswer, warnings: &mut Vec<WarningCode>) -> bool {
        let Some(text) = raw.as_str() else {
            return false;
        };
        let scan = Scan::new(text);
        if self.not_mentioned(&scan) {
            return false;
        }
        if self
            .keywords
            .keywords("yes")
            .iter()
            .any(|k| scan.starts_with(k))
        {
            return true;
        }
        if self
            .keywords
            .keywords("no")
            .iter()
            .any(|k| scan.starts_with(k))
        {
            return false;
        }
        warnings.push(WarningCode::UnrecognizedBoolean);
        false
    }

    /// Returns `(solid, ground_glass, mixed_ground_glass)` with at most one true.
    pub fn resolve_density(
        &self,
        solid_raw: &RawAnswer,
        ggo_raw: &RawAnswer,
        mixed_raw: &RawAnswer,
        warnings: &mut Vec<WarningCode>,
    ) -> (bool, bool, bool) {
        let tentative = (
            self.parse_bool(solid_raw, warnings),
            self.parse_bool(ggo_raw, warnings),
            self.parse_bool(mixed_raw, warnings),
        );
        apply_density_priority(tentative, self.priority)
    }

    pub fn postprocess(&self, form: &FilledForm) -> StructuredRecord {
        let mut warnings = form.warnings.clone();
        let answer = |q: QuestionId| form.get(q);
        let location = self.normalize_location(answer(QuestionId::LOCATION));
        let long_diameter_mm =
            self.parse_length_mm(answer(QuestionId::LONG_DIAMETER), &mut warnings);
        let short_diameter_mm =
            self.parse_length_mm(answer(QuestionId::SHORT_DIAMETER), &mut warnings);
        let (solid, ground_glass, mixed_ground_glass) = self.resolve_density(
            answer(QuestionId::SOLID),
            answer(QuestionId::GROUND_GLASS),
            answer(QuestionId::MIXED_GROUND_GLASS),
            &mut warnings,
        );
        let mut flag = |q: QuestionId| self.parse_bool(answer(q), &mut warnings);
        let spiculation = flag(QuestionId::SPICULATION);
        let lobulation = flag(QuestionId::LOBULATION);
        let pleural_invasion = flag(QuestionId::PLEURAL_INVASION);
        let mediastinal_ln_enlarged = flag(QuestionId::MEDIASTINAL_LN);
        let hilar_ln_enlarged = flag(QuestionId::HILAR_LN);
        if let (Some(long), Some(short)) = (long_diameter_mm, short_diameter_mm) {
            if long < short {
                warnings.push(WarningCode::LongShorterThanShort);
            }
        }
        let findings = Findings {
            location,
            long_diameter_mm,
            short_diameter_mm,
            solid,
            ground_glass,
            mixed_ground_glass,
            spiculation,
            lobulation,
            pleural_invasion,
            mediastinal_ln_enlarged,
            hilar_ln_enlarged,
        };
        StructuredRecord::new(form.report_id.clone(), findings, warnings)
            .expect("normalized findings satisfy record invariants")
    }
}

/// Keeps only the highest-priority true label of `(solid, ground_glass, mixed)`.
pub fn apply_density_priority(
    (solid, ground_glass, mixed): (bool, bool, bool),
    priority: DensityPriority,
) -> (bool, bool, bool) {
    let is_set = |label: DensityLabel| match label {
        DensityLabel::Solid => solid,
        DensityLabel::GroundGlass => ground_glass,
        DensityLabel::MixedGroundGlass => mixed,
    };
    match priority.order().into_iter().find(|&l| is_set(l)) {
        Some(DensityLabel::Solid) => (true, false, false),
        Some(DensityLabel::GroundGlass) => (false, true, false),
        Some(DensityLabel::MixedGroundGlass) => (false, false, true),
        None => (false, false, false),
    }
}

/// Canonical answer strings for a set of findings, one per question.
///
/// Post-processing these answers reproduces the findings exactly.
pub fn canonical_answers(findings: &Findings) -> [String; QUESTION_COUNT] {
    let length = |v: Option<f64>| match v {
        Some(mm) => format!("{mm} mm"),
        None => "Not mentioned".to_string(),
    };
    let yes_no = |b: bool| if b { "Yes" } else { "No" }.to_string();
    [
        findings.location.phrase().to_string(),
        length(findings.long_diameter_mm),
        length(findings.short_diameter_mm),
        yes_no(findings.solid),
        yes_no(findings.ground_glass),
        yes_no(findings.mixed_ground_glass),
        yes_no(findings.spiculation),
        yes_no(findings.lobulation),
        yes_no(findings.pleural_invasion),
        yes_no(findings.mediastinal_ln_enlarged),
        yes_no(findings.hilar_ln_enlarged),
    ]
}

fn default_normalizer() -> &'static Normalizer {
    static N: OnceLock<Normalizer> = OnceLock::new();
    N.get_or_init(Normalizer::default)
}

pub fn normalize_location(raw: &RawAnswer) -> LocationCategory {
    default_normalizer().normalize_location(raw)
}

pub fn parse_length_mm(raw: &RawAnswer) -> (Option<f64>, Vec<WarningCode>) {
    let mut warnings = Vec::new();
    let v = default_normalizer().parse_length_mm(raw, &mut warnings);
    (v, warnings)
}

pub fn parse_bool(raw: &RawAnswer) -> (bool, Vec<WarningCode>) {
    let mut warnings = Vec::new();
    let v = default_normalizer().parse_bool(raw, &mut warnings);
    (v, warnings)
}

pub fn resolve_density(
    solid_raw: &RawAnswer,
    ggo_raw: &RawAnswer,
    mixed_raw: &RawAnswer,
    priority: DensityPriority,
) -> (bool, bool, bool) {
    let n = default_normalizer();
    let mut sink = Vec::new();
    let tentative = (
        n.parse_bool(solid_raw, &mut sink),
        n.parse_bool(ggo_raw, &mut sink),
        n.parse_bool(mixed_raw, &mut sink),
    );
    apply_density_priority(tentative, priority)
}

pub fn postprocess(form: &FilledForm, priority: DensityPriority) -> StructuredRecord {
    Normalizer::new(KeywordTable::english().clone(), priority).postprocess(form)
}
