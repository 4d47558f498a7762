//! Recovers the filled question form from a free-text chat response.
//!
//! A form line is `<label><sep><answer>` where the separator is the first `:`
//! or a whitespace-delimited dash. The label matches a question either by its
//! leading number or, for unnumbered labels, by token overlap with the
//! question text. Everything else in the response is ignored.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{QuestionId, QuestionSpec, WarningCode, QUESTION_COUNT};

/// Minimum token overlap (Jaccard) between an unnumbered label and a question.
pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormError {
    #[error("response is empty")]
    EmptyResponse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "text", rename_all = "lowercase")]
#[derive(Default)]
pub enum RawAnswer {
    Present(String),
    #[default]
    Missing,
}

impl RawAnswer {
    /// Builds an answer from captured text; blank text becomes `Missing`.
    pub fn from_text(text: &str) -> Self {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            RawAnswer::Missing
        } else {
            RawAnswer::Present(trimmed.to_string())
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            RawAnswer::Present(s) => Some(s),
            RawAnswer::Missing => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledForm {
    pub report_id: String,
    pub answers: [RawAnswer; QUESTION_COUNT],
    pub warnings: Vec<WarningCode>,
}

impl FilledForm {
    pub fn get(&self, question: QuestionId) -> &RawAnswer {
        &self.answers[question.index()]
    }

    pub fn is_empty(&self) -> bool {
        self.answers.iter().all(|a| *a == RawAnswer::Missing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormParser {
    pub fuzzy_threshold: f64,
}

impl Default for FormParser {
    fn default() -> Self {
        FormParser {
            fuzzy_threshold: DEFAULT_FUZZY_THRESHOLD,
        }
    }
}

/// One response line split into label and answer.
#[derive(Debug)]
struct LabeledLine {
    number: Option<u32>,
    tokens: BTreeSet<String>,
    answer: String,
}

fn number_label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(?:[-*•]\s+)?(?:\*\*)?\s*(?:q(?:uestion)?\s*)?\(?(\d{1,3})[.)\]]?(?:\s|\*|$)",
        )
        .unwrap()
    })
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Byte offset of the first `:` or whitespace-delimited dash, and its length.
fn find_separator(line: &str) -> Option<(usize, usize)> {
    let mut prev_ws = false;
    let mut iter = line.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        match c {
            ':' => return Some((i, 1)),
            '-' | '–' | '—' if prev_ws => {
                let next_ws = iter.peek().is_none_or(|(_, n)| n.is_whitespace());
                if next_ws {
                    return Some((i, c.len_utf8()));
                }
            }
            _ => {}
        }
        prev_ws = c.is_whitespace();
    }
    None
}

fn clean_answer(answer: &str, bold_label: bool) -> String {
    let mut a = answer.trim();
    if bold_label {
        a = a.trim_start_matches("**").trim_start();
    }
    if !a.is_empty() && a.chars().all(|c| c == '_') {
        return String::new();
    }
    a.to_string()
}

fn split_line(line: &str) -> Option<LabeledLine> {
    let (pos, len) = find_separator(line)?;
    let label = &line[..pos];
    let answer = clean_answer(&line[pos + len..], label.contains("**"));
    if answer.is_empty() {
        return None;
    }
    // "2: answer" leaves a bare number as the label.
    let number = number_label_re()
        .captures(label)
        .and_then(|c| c[1].parse::<u32>().ok());
    Some(LabeledLine {
        number,
        tokens: tokens(label),
        answer,
    })
}

impl FormParser {
    pub fn new(fuzzy_threshold: f64) -> Self {
        FormParser { fuzzy_threshold }
    }

    fn label_matches(&self, line: &LabeledLine, spec: &QuestionSpec) -> Option<f64> {
        match line.number {
            Some(n) if n == u32::from(spec.id.get()) => Some(f64::INFINITY),
            Some(_) => None,
            None => {
                let score = jaccard(&tokens(spec.text), &line.tokens);
                (score >= self.fuzzy_threshold).then_some(score)
            }
        }
    }

    /// Answer text captured from `line` if it is a filled form line for `spec`.
    pub fn match_form_line(&self, line: &str, spec: &QuestionSpec) -> Option<String> {
        let parsed = split_line(line)?;
        self.label_matches(&parsed, spec)?;
        Some(parsed.answer)
    }

    pub fn extract_form(
        &self,
        response_text: &str,
        schema: &[QuestionSpec],
    ) -> Result<FilledForm, FormError> {
        if response_text.trim().is_empty() {
            return Err(FormError::EmptyResponse);
        }
        let lines: Vec<Option<LabeledLine>> = response_text.lines().map(split_line).collect();
        let mut consumed = vec![false; lines.len()];
        let mut answers: [RawAnswer; QUESTION_COUNT] = Default::default();

        for spec in schema {
            let mut best: Option<(usize, f64)> = None;
            for (i, line) in lines.iter().enumerate() {
                let Some(line) = line else { continue };
                if consumed[i] {
                    continue;
                }
                if let Some(score) = self.label_matches(line, spec) {
                    // strict comparison keeps the earliest line on ties
                    if best.is_none_or(|(_, s)| score > s) {
                        best = Some((i, score));
                    }
                }
            }
            if let Some((i, _)) = best {
                consumed[i] = true;
                let line = lines[i].as_ref().unwrap();
                answers[spec.id.index()] = RawAnswer::from_text(&line.answer);
            }
        }

        let mut warnings = Vec::new();
        if answers.iter().all(|a| *a == RawAnswer::Missing) {
            warnings.push(WarningCode::FormNotFound);
        }
        Ok(FilledForm {
            report_id: String::new(),
            answers,
            warnings,
        })
    }
}

/// [`FormParser::extract_form`] with the default threshold.
pub fn extract_form(response_text: &str, schema: &[QuestionSpec]) -> Result<FilledForm, FormError> {
    FormParser::default().extract_form(response_text, schema)
}

/// [`FormParser::match_form_line`] with the default threshold.
pub fn match_form_line(line: &str, spec: &QuestionSpec) -> Option<String> {
    FormParser::default().match_form_line(line, spec)
}

/// Renders a filled form, one `<n>. <question>: <answer>` line per question.
pub fn render_filled_form(answers: &[String; QUESTION_COUNT]) -> String {
    QuestionId::all()
        .map(|q| format!("{}. {}: {}", q.get(), q.text(), answers[q.index()]))
        .collect::<Vec<_>>()
        .join("\n")
}
