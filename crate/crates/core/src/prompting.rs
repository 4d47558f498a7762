//! Three-part prompt templates and prompt rendering.
//!
//! A template holds a report slot (part 1), the extraction instruction with
//! the unfilled question form (part 2), and a list of supplementary
//! requirements (part 3). Templates are stored as plain text files with
//! `=== PARTn ===` section delimiters so that users can supply their own
//! wording; only the structure is validated.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{QuestionId, Report, QUESTION_COUNT};

pub const REPORT_PLACEHOLDER: &str = "{{report}}";
/// First line of every rendered prompt; carries the report id.
pub const REPORT_ID_HEADER: &str = "Report ID:";

const PART1_DELIM: &str = "=== PART1 ===";
const PART2_DELIM: &str = "=== PART2 ===";
const PART3_DELIM: &str = "=== PART3 ===";

const BASE_TEMPLATE: &str = include_str!("../templates/base.txt");
const PMK_TEMPLATE: &str = include_str!("../templates/pmk.txt");

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("part 1 does not contain the {{{{report}}}} placeholder")]
    MissingPlaceholder,
    #[error("part 1 contains the {{{{report}}}} placeholder {0} times, expected once")]
    DuplicatePlaceholder(usize),
    #[error("question form mismatch: {0}")]
    FormLineMismatch(String),
    #[error("malformed template: {0}")]
    ParseError(String),
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinTemplate {
    Base,
    Pmk,
}

impl BuiltinTemplate {
    pub fn name(self) -> &'static str {
        match self {
            BuiltinTemplate::Base => "base",
            BuiltinTemplate::Pmk => "pmk",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "base" => Some(BuiltinTemplate::Base),
            "pmk" => Some(BuiltinTemplate::Pmk),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptTemplate {
    pub name: String,
    pub part1: String,
    pub part2: String,
    pub part3: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub report_id: String,
    pub template_name: String,
    pub body: String,
}

fn form_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)\.\s+(.+?)\s*:\s*_+\s*$").unwrap())
}

/// The blank form line for one question, `<n>. <question text>: ____`.
pub fn form_line(question: QuestionId) -> String {
    format!("{}. {}: ____", question.get(), question.text())
}

pub fn builtin_template(variant: BuiltinTemplate) -> PromptTemplate {
    let source = match variant {
        BuiltinTemplate::Base => BASE_TEMPLATE,
        BuiltinTemplate::Pmk => PMK_TEMPLATE,
    };
    PromptTemplate::parse(variant.name(), source).expect("built-in template is valid")
}

pub fn load_template(path: impl AsRef<Path>) -> Result<PromptTemplate, TemplateError> {
    let path = path.as_ref();
    let source = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "custom".to_string());
    PromptTemplate::parse(name, &source)
}

impl PromptTemplate {
    /// Parses the sectioned template text format and validates it.
    pub fn parse(name: impl Into<String>, source: &str) -> Result<Self, TemplateError> {
        let mut sections: [Option<Vec<&str>>; 3] = [None, None, None];
        let mut current: Option<usize> = None;
        for (lineno, line) in source.lines().enumerate() {
            let delim = match line.trim_end() {
                PART1_DELIM => Some(0),
                PART2_DELIM => Some(1),
                PART3_DELIM => Some(2),
                _ => None,
            };
            if let Some(idx) = delim {
                if sections[idx].is_some() {
                    return Err(TemplateError::ParseError(format!(
                        "line {}: section PART{} appears twice",
                        lineno + 1,
                        idx + 1
                    )));
                }
                if current.map_or(idx != 0, |c| idx != c + 1) {
                    return Err(TemplateError::ParseError(format!(
                        "line {}: sections must appear in order PART1, PART2, PART3",
                        lineno + 1
                    )));
                }
                sections[idx] = Some(Vec::new());
                current = Some(idx);
                continue;
            }
            match current {
                Some(idx) => sections[idx].as_mut().unwrap().push(line),
                None if line.trim().is_empty() => {}
                None => {
                    return Err(TemplateError::ParseError(format!(
                        "line {}: text before {PART1_DELIM}",
                        lineno + 1
                    )))
                }
            }
        }
        let [Some(p1), Some(p2), Some(p3)] = sections else {
            return Err(TemplateError::ParseError(
                "expected PART1, PART2 and PART3 sections".into(),
            ));
        };
        let template = PromptTemplate {
            name: name.into(),
            part1: trim_blank_lines(&p1),
            part2: trim_blank_lines(&p2),
            part3: p3
                .iter()
                .map(|l| l.trim())
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
        };
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        match self.part1.matches(REPORT_PLACEHOLDER).count() {
            0 => return Err(TemplateError::MissingPlaceholder),
            1 => {}
            n => return Err(TemplateError::DuplicatePlaceholder(n)),
        }
        for (part, text) in [
            ("part 2", self.part2.as_str()),
            ("part 3", &self.part3.join("\n")),
        ] {
            if text.contains("{{") {
                return Err(TemplateError::ParseError(format!(
                    "{part} contains a placeholder; only part 1 may hold {REPORT_PLACEHOLDER}"
                )));
            }
        }
        if self.part1.replace(REPORT_PLACEHOLDER, "").contains("{{") {
            return Err(TemplateError::ParseError(
                "part 1 contains an unsupported placeholder".into(),
            ));
        }
        self.check_form_lines()
    }

    fn check_form_lines(&self) -> Result<(), TemplateError> {
        let found: Vec<(u32, String)> = self
            .part2
            .lines()
            .filter_map(|line| form_line_re().captures(line))
            .map(|c| (c[1].parse::<u32>().unwrap_or(0), c[2].to_string()))
            .collect();
        if found.len() != QUESTION_COUNT {
            return Err(TemplateError::FormLineMismatch(format!(
                "expected {QUESTION_COUNT} form lines, found {}",
                found.len()
            )));
        }
        for ((number, text), question) in found.iter().zip(QuestionId::all()) {
            if *number != u32::from(question.get()) || !text.eq_ignore_ascii_case(question.text()) {
                return Err(TemplateError::FormLineMismatch(format!(
                    "form line {number}. {text:?} does not match question {}. {:?}",
                    question.get(),
                    question.text()
                )));
            }
        }
        Ok(())
    }

    /// Serializes to the sectioned text format accepted by [`load_template`].
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        out.push_str(PART1_DELIM);
        out.push('\n');
        out.push_str(&self.part1);
        out.push('\n');
        out.push_str(PART2_DELIM);
        out.push('\n');
        out.push_str(&self.part2);
        out.push('\n');
        out.push_str(PART3_DELIM);
        out.push('\n');
        for entry in &self.part3 {
            out.push_str(entry);
            out.push('\n');
        }
        out
    }
}

fn trim_blank_lines(lines: &[&str]) -> String {
    let start = lines.iter().position(|l| !l.trim().is_empty());
    let end = lines.iter().rposition(|l| !l.trim().is_empty());
    match (start, end) {
        (Some(s), Some(e)) => lines[s..=e].join("\n"),
        _ => String::new(),
    }
}

/// Combines a report with a template.
///
/// The body starts with a `Report ID: <id>` line, then part 1 with the report
/// substituted, part 2, and the part 3 entries one per line.
pub fn render_prompt(report: &Report, template: &PromptTemplate) -> PromptText {
    let mut body = String::with_capacity(
        report.text.len() + template.part1.len() + template.part2.len() + 256,
    );
    body.push_str(REPORT_ID_HEADER);
    body.push(' ');
    body.push_str(&report.id);
    body.push_str("\n\n");
    body.push_str(&template.part1.replacen(REPORT_PLACEHOLDER, &report.text, 1));
    body.push_str("\n\n");
    body.push_str(&template.part2);
    if !template.part3.is_empty() {
        body.push_str("\n\n");
        body.push_str(&template.part3.join("\n"));
    }
    PromptText {
        report_id: report.id.clone(),
        template_name: template.name.clone(),
        body,
    }
}

/// Reads the report id back out of a rendered prompt body.
pub fn embedded_report_id(body: &str) -> Option<&str> {
    let first = body.lines().next()?;
    let id = first.strip_prefix(REPORT_ID_HEADER)?.trim();
    (!id.is_empty()).then_some(id)
}
