//! Fixed question schema and the domain records shared across the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of questions in the extraction form.
pub const QUESTION_COUNT: usize = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("question id {0} is outside 1..=11")]
    InvalidQuestionId(u8),
    #[error("report id must be non-empty")]
    EmptyReportId,
    #[error("report {0} has empty text")]
    EmptyReportText(String),
    #[error("record {0}: more than one density label is true")]
    DensityNotExclusive(String),
    #[error("record {report_id}: {field} must be a positive finite length, got {value}")]
    InvalidDiameter {
        report_id: String,
        field: &'static str,
        value: f64,
    },
    #[error("unknown location code {0:?}")]
    UnknownLocation(String),
}

/// Question number, 1 through 11 in form order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct QuestionId(u8);

impl QuestionId {
    pub const LOCATION: QuestionId = QuestionId(1);
    pub const LONG_DIAMETER: QuestionId = QuestionId(2);
    pub const SHORT_DIAMETER: QuestionId = QuestionId(3);
    pub const SOLID: QuestionId = QuestionId(4);
    pub const GROUND_GLASS: QuestionId = QuestionId(5);
    pub const MIXED_GROUND_GLASS: QuestionId = QuestionId(6);
    pub const SPICULATION: QuestionId = QuestionId(7);
    pub const LOBULATION: QuestionId = QuestionId(8);
    pub const PLEURAL_INVASION: QuestionId = QuestionId(9);
    pub const MEDIASTINAL_LN: QuestionId = QuestionId(10);
    pub const HILAR_LN: QuestionId = QuestionId(11);

    pub fn new(value: u8) -> Result<Self, SchemaError> {
        if (1..=QUESTION_COUNT as u8).contains(&value) {
            Ok(QuestionId(value))
        } else {
            Err(SchemaError::InvalidQuestionId(value))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based position in the form.
    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }

    pub fn all() -> impl Iterator<Item = QuestionId> + Clone {
        (1..=QUESTION_COUNT as u8).map(QuestionId)
    }

    pub fn kind(self) -> AnswerKind {
        match self.0 {
            1 => AnswerKind::Categorical,
            2 | 3 => AnswerKind::Numerical,
            _ => AnswerKind::Boolean,
        }
    }

    pub fn text(self) -> &'static str {
        QUESTION_TEXT[self.index()]
    }
}

impl TryFrom<u8> for QuestionId {
    type Error = SchemaError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        QuestionId::new(value)
    }
}

impl From<QuestionId> for u8 {
    fn from(id: QuestionId) -> u8 {
        id.0
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnswerKind {
    Categorical,
    Numerical,
    Boolean,
}

const QUESTION_TEXT: [&str; QUESTION_COUNT] = [
    "Tumor location",
    "Tumor long diameter",
    "Tumor short diameter",
    "Is the tumor solid",
    "Is the tumor ground-glass opacity",
    "Is the tumor mixed ground-glass opacity",
    "Does the tumor have spiculations",
    "Does the tumor have lobulations",
    "Is there pleural invasion or indentation",
    "Are mediastinal lymph nodes enlarged",
    "Are hilar lymph nodes enlarged",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QuestionSpec {
    pub id: QuestionId,
    pub text: &'static str,
    pub kind: AnswerKind,
}

/// The eleven extraction questions in form order.
pub fn question_schema() -> Vec<QuestionSpec> {
    QuestionId::all()
        .map(|id| QuestionSpec {
            id,
            text: id.text(),
            kind: id.kind(),
        })
        .collect()
}

/// A free-text CT report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub text: String,
}

impl Report {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, SchemaError> {
        let report = Report {
            id: id.into(),
            text: text.into(),
        };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.id.trim().is_empty() {
            return Err(SchemaError::EmptyReportId);
        }
        if self.text.trim().is_empty() {
            return Err(SchemaError::EmptyReportText(self.id.clone()));
        }
        Ok(())
    }
}

/// Lobe-level tumor location. There is no left middle lobe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LocationCategory {
    #[serde(rename = "RUL")]
    RightUpperLobe,
    #[serde(rename = "RML")]
    RightMiddleLobe,
    #[serde(rename = "RLL")]
    RightLowerLobe,
    #[serde(rename = "LUL")]
    LeftUpperLobe,
    #[serde(rename = "LLL")]
    LeftLowerLobe,
    #[serde(rename = "OTHER")]
    Other,
}

impl LocationCategory {
    pub const ALL: [LocationCategory; 6] = [
        LocationCategory::RightUpperLobe,
        LocationCategory::RightMiddleLobe,
        LocationCategory::RightLowerLobe,
        LocationCategory::LeftUpperLobe,
        LocationCategory::LeftLowerLobe,
        LocationCategory::Other,
    ];

    pub fn code(self) -> &'static str {
        match self {
            LocationCategory::RightUpperLobe => "RUL",
            LocationCategory::RightMiddleLobe => "RML",
            LocationCategory::RightLowerLobe => "RLL",
            LocationCategory::LeftUpperLobe => "LUL",
            LocationCategory::LeftLowerLobe => "LLL",
            LocationCategory::Other => "OTHER",
        }
    }

    pub fn from_code(code: &str) -> Result<Self, SchemaError> {
        LocationCategory::ALL
            .into_iter()
            .find(|c| c.code().eq_ignore_ascii_case(code))
            .ok_or_else(|| SchemaError::UnknownLocation(code.to_string()))
    }

    /// English phrase used when rendering a canonical answer.
    pub fn phrase(self) -> &'static str {
        match self {
            LocationCategory::RightUpperLobe => "right upper lobe",
            LocationCategory::RightMiddleLobe => "right middle lobe",
            LocationCategory::RightLowerLobe => "right lower lobe",
            LocationCategory::LeftUpperLobe => "left upper lobe",
            LocationCategory::LeftLowerLobe => "left lower lobe",
            LocationCategory::Other => "Other",
        }
    }
}

impl fmt::Display for LocationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Machine-readable normalization warnings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WarningCode {
    UnitAssumedMm,
    NumericUnparseable,
    UnrecognizedBoolean,
    FormNotFound,
    LongShorterThanShort,
}

impl WarningCode {
    pub fn as_str(self) -> &'static str {
        match self {
            WarningCode::UnitAssumedMm => "UNIT_ASSUMED_MM",
            WarningCode::NumericUnparseable => "NUMERIC_UNPARSEABLE",
            WarningCode::UnrecognizedBoolean => "UNRECOGNIZED_BOOLEAN",
            WarningCode::FormNotFound => "FORM_NOT_FOUND",
            WarningCode::LongShorterThanShort => "LONG_SHORTER_THAN_SHORT",
        }
    }
}

impl fmt::Display for WarningCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The eleven extracted fields of one report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Findings {
    pub location: LocationCategory,
    pub long_diameter_mm: Option<f64>,
    pub short_diameter_mm: Option<f64>,
    pub solid: bool,
    pub ground_glass: bool,
    pub mixed_ground_glass: bool,
    pub spiculation: bool,
    pub lobulation: bool,
    pub pleural_invasion: bool,
    pub mediastinal_ln_enlarged: bool,
    pub hilar_ln_enlarged: bool,
}

/// The value of one question's field, comparable across records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldValue {
    Location(LocationCategory),
    Length(Option<f64>),
    Flag(bool),
}

impl Findings {
    /// All-negative findings: location Other, no diameters, every flag false.
    pub fn empty() -> Self {
        Findings {
            location: LocationCategory::Other,
            long_diameter_mm: None,
            short_diameter_mm: None,
            solid: false,
            ground_glass: false,
            mixed_ground_glass: false,
            spiculation: false,
            lobulation: false,
            pleural_invasion: false,
            mediastinal_ln_enlarged: false,
            hilar_ln_enlarged: false,
        }
    }

    pub fn value(&self, question: QuestionId) -> FieldValue {
        match question.get() {
            1 => FieldValue::Location(self.location),
            2 => FieldValue::Length(self.long_diameter_mm),
            3 => FieldValue::Length(self.short_diameter_mm),
            q => FieldValue::Flag(self.flag(q).expect("boolean question")),
        }
    }

    fn flag(&self, question: u8) -> Option<bool> {
        Some(match question {
            4 => self.solid,
            5 => self.ground_glass,
            6 => self.mixed_ground_glass,
            7 => self.spiculation,
            8 => self.lobulation,
            9 => self.pleural_invasion,
            10 => self.mediastinal_ln_enlarged,
            11 => self.hilar_ln_enlarged,
            _ => return None,
        })
    }

    /// Mutable access to a boolean question's flag; `None` for questions 1-3.
    pub fn flag_mut(&mut self, question: QuestionId) -> Option<&mut bool> {
        Some(match question.get() {
            4 => &mut self.solid,
            5 => &mut self.ground_glass,
            6 => &mut self.mixed_ground_glass,
            7 => &mut self.spiculation,
            8 => &mut self.lobulation,
            9 => &mut self.pleural_invasion,
            10 => &mut self.mediastinal_ln_enlarged,
            11 => &mut self.hilar_ln_enlarged,
            _ => return None,
        })
    }

    pub fn density_true_count(&self) -> usize {
        [self.solid, self.ground_glass, self.mixed_ground_glass]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    pub fn validate(&self, report_id: &str) -> Result<(), SchemaError> {
        if self.density_true_count() > 1 {
            return Err(SchemaError::DensityNotExclusive(report_id.to_string()));
        }
        for (field, value) in [
            ("long_diameter_mm", self.long_diameter_mm),
            ("short_diameter_mm", self.short_diameter_mm),
        ] {
            if let Some(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    return Err(SchemaError::InvalidDiameter {
                        report_id: report_id.to_string(),
                        field,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Normalized extraction result for one report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct StructuredRecord {
    pub report_id: String,
    #[serde(flatten)]
    pub findings: Findings,
    pub warnings: Vec<WarningCode>,
}

#[derive(Deserialize)]
struct RawRecord {
    report_id: String,
    #[serde(flatten)]
    findings: Findings,
    #[serde(default)]
    warnings: Vec<WarningCode>,
}

impl TryFrom<RawRecord> for StructuredRecord {
    type Error = SchemaError;

    fn try_from(raw: RawRecord) -> Result<Self, Self::Error> {
        StructuredRecord::new(raw.report_id, raw.findings, raw.warnings)
    }
}

impl StructuredRecord {
    pub fn new(
        report_id: impl Into<String>,
        findings: Findings,
        warnings: Vec<WarningCode>,
    ) -> Result<Self, SchemaError> {
        let report_id = report_id.into();
        findings.validate(&report_id)?;
        Ok(StructuredRecord {
            report_id,
            findings,
            warnings,
        })
    }
}

/// Reference annotation for one report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoldLabel {
    pub report_id: String,
    #[serde(flatten)]
    pub findings: Findings,
}

impl GoldLabel {
    pub fn new(report_id: impl Into<String>, findings: Findings) -> Result<Self, SchemaError> {
        let report_id = report_id.into();
        findings.validate(&report_id)?;
        Ok(GoldLabel {
            report_id,
            findings,
        })
    }
}
