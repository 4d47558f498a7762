//! Per-question accuracy, precision, recall and F1 against gold labels, and
//! the repeat-run agreement statistic.
//!
//! Boolean questions use `true` as the positive class. The location question
//! is scored by exact-match accuracy plus an unweighted macro average of
//! one-vs-rest precision/recall over the classes present in the gold labels.
//! Diameter questions treat a prediction as correct when both values are
//! present and within the tolerance, or both are absent; recall counts gold
//! diameters that received any prediction. All zero denominators yield 0.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{
    AnswerKind, FieldValue, GoldLabel, LocationCategory, QuestionId, StructuredRecord,
    QUESTION_COUNT,
};

pub const DEFAULT_TOLERANCE_MM: f64 = 0.1;
pub const CATEGORICAL_AVERAGING: &str = "macro over gold-present classes";
pub const ZERO_DIVISION_CONVENTION: &str = "0 when denominator is 0";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("predictions ({preds}) and gold labels ({golds}) differ in length")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("no gold label for report {0:?}")]
    MissingGold(String),
    #[error("duplicate report id {0:?}")]
    DuplicateId(String),
    #[error("tolerance must be a non-negative number, got {0}")]
    InvalidTolerance(f64),
    #[error("runs cover different report sets: {0}")]
    RunMismatch(String),
    #[error("consistency needs at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("metrics schema mismatch: {0}")]
    SchemaMismatch(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn from_pairs(preds: &[bool], golds: &[bool]) -> Self {
        let mut c = ConfusionCounts::default();
        for (&p, &g) in preds.iter().zip(golds) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    let den = precision + recall;
    if den == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a precision or recall denominator was zero.
    pub zero_division: bool,
}

impl Scores {
    fn new(accuracy: f64, precision: f64, recall: f64, zero_division: bool) -> Self {
        Scores {
            accuracy,
            precision,
            recall,
            f1: f1_score(precision, recall),
            zero_division,
        }
    }
}

fn check_lengths(preds: usize, golds: usize) -> Result<(), EvalError> {
    if preds != golds {
        return Err(EvalError::LengthMismatch { preds, golds });
    }
    if preds == 0 {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

pub fn metrics_boolean(preds: &[bool], golds: &[bool]) -> Result<Scores, EvalError> {
    check_lengths(preds.len(), golds.len())?;
    let c = ConfusionCounts::from_pairs(preds, golds);
    let (accuracy, _) = ratio(c.tp + c.tn, c.total());
    let (precision, zp) = ratio(c.tp, c.tp + c.fp);
    let (recall, zr) = ratio(c.tp, c.tp + c.fn_);
    Ok(Scores::new(accuracy, precision, recall, zp || zr))
}

pub fn metrics_categorical(
    preds: &[LocationCategory],
    golds: &[LocationCategory],
) -> Result<Scores, EvalError> {
    check_lengths(preds.len(), golds.len())?;
    let n = preds.len();
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    let classes: BTreeSet<LocationCategory> = golds.iter().copied().collect();
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut zero_division = false;
    for &class in &classes {
        let p: Vec<bool> = preds.iter().map(|&x| x == class).collect();
        let g: Vec<bool> = golds.iter().map(|&x| x == class).collect();
        let c = ConfusionCounts::from_pairs(&p, &g);
        let (precision, zp) = ratio(c.tp, c.tp + c.fp);
        let (recall, zr) = ratio(c.tp, c.tp + c.fn_);
        precision_sum += precision;
        recall_sum += recall;
        zero_division |= zp || zr;
    }
    let k = classes.len() as f64;
    Ok(Scores::new(
        correct as f64 / n as f64,
        precision_sum / k,
        recall_sum / k,
        zero_division,
    ))
}

pub fn metrics_numerical(
    preds: &[Option<f64>],
    golds: &[Option<f64>],
    tol: f64,
) -> Result<Scores, EvalError> {
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(EvalError::InvalidTolerance(tol));
    }
    check_lengths(preds.len(), golds.len())?;
    let mut correct = 0;
    let mut predicted = 0;
    let mut predicted_correct = 0;
    let mut gold_present = 0;
    let mut gold_present_predicted = 0;
    for (p, g) in preds.iter().zip(golds) {
        let ok = match (p, g) {
            (Some(p), Some(g)) => (p - g).abs() <= tol,
            (None, None) => true,
            _ => false,
        };
        correct += usize::from(ok);
        if p.is_some() {
            predicted += 1;
            predicted_correct += usize::from(ok);
        }
        if g.is_some() {
            gold_present += 1;
            gold_present_predicted += usize::from(p.is_some());
        }
    }
    let (accuracy, _) = ratio(correct, preds.len());
    let (precision, zp) = ratio(predicted_correct, predicted);
    let (recall, zr) = ratio(gold_present_predicted, gold_present);
    Ok(Scores::new(accuracy, precision, recall, zp || zr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub question: QuestionId,
    pub question_text: String,
    pub kind: AnswerKind,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_reports: usize,
    pub tolerance_mm: f64,
    pub categorical_averaging: String,
    pub zero_division: String,
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    /// Checks that the report holds exactly questions 1..=11 in order.
    pub fn check_schema(&self) -> Result<(), EvalError> {
        let ids: Vec<u8> = self.rows.iter().map(|r| r.question.get()).collect();
        let expected: Vec<u8> = QuestionId::all().map(QuestionId::get).collect();
        if ids != expected {
            return Err(EvalError::SchemaMismatch(format!(
                "expected questions 1..=11, found {ids:?}"
            )));
        }
        Ok(())
    }
}

fn index_unique<T>(items: &[T], id: impl Fn(&T) -> &str) -> Result<HashMap<&str, &T>, EvalError> {
    let mut map = HashMap::with_capacity(items.len());
    for item in items {
        if map.insert(id(item), item).is_some() {
            return Err(EvalError::DuplicateId(id(item).to_string()));
        }
    }
    Ok(map)
}

/// Scores every question over `records`, each of which must have a gold label.
pub fn evaluate(
    records: &[StructuredRecord],
    golds: &[GoldLabel],
    tol: f64,
) -> Result<MetricsReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    index_unique(records, |r| &r.report_id)?;
    let gold_by_id = index_unique(golds, |g| &g.report_id)?;
    let pairs: Vec<(&StructuredRecord, &GoldLabel)> = records
        .iter()
        .map(|r| {
            gold_by_id
                .get(r.report_id.as_str())
                .map(|g| (r, *g))
                .ok_or_else(|| EvalError::MissingGold(r.report_id.clone()))
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(QUESTION_COUNT);
    for q in QuestionId::all() {
        let values: Vec<(FieldValue, FieldValue)> = pairs
            .iter()
            .map(|(r, g)| (r.findings.value(q), g.findings.value(q)))
            .collect();
        let scores = match q.kind() {
            AnswerKind::Categorical => {
                let (p, g): (Vec<_>, Vec<_>) = values
                    .iter()
                    .map(|v| match v {
                        (FieldValue::Location(p), FieldValue::Location(g)) => (*p, *g),
                        _ => unreachable!("location question"),
                    })
                    .unzip();
                metrics_categorical(&p, &g)?
            }
            AnswerKind::Numerical => {
                let (p, g): (Vec<_>, Vec<_>) = values
                    .iter()
                    .map(|v| match v {
                        (FieldValue::Length(p), FieldValue::Length(g)) => (*p, *g),
                        _ => unreachable!("diameter question"),
                    })
                    .unzip();
                metrics_numerical(&p, &g, tol)?
            }
            AnswerKind::Boolean => {
                let (p, g): (Vec<_>, Vec<_>) = values
                    .iter()
                    .map(|v| match v {
                        (FieldValue::Flag(p), FieldValue::Flag(g)) => (*p, *g),
                        _ => unreachable!("boolean question"),
                    })
                    .unzip();
                metrics_boolean(&p, &g)?
            }
        };
        rows.push(MetricsRow {
            question: q,
            question_text: q.text().to_string(),
            kind: q.kind(),
            scores,
        });
    }
    Ok(MetricsReport {
        n_reports: records.len(),
        tolerance_mm: tol,
        categorical_averaging: CATEGORICAL_AVERAGING.to_string(),
        zero_division: ZERO_DIVISION_CONVENTION.to_string(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub question: QuestionId,
    pub question_text: String,
    pub k: usize,
    pub agree_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub k: usize,
    pub n_reports: usize,
    pub rows: Vec<ConsistencyRow>,
}

/// Fraction of reports whose answers agree across all `k` runs, per question.
pub fn consistency(runs: &[Vec<StructuredRecord>]) -> Result<ConsistencyReport, EvalError> {
    if runs.len() < 2 {
        return Err(EvalError::TooFewRuns(runs.len()));
    }
    let indexed: Vec<HashMap<&str, &StructuredRecord>> = runs
        .iter()
        .map(|run| index_unique(run, |r| &r.report_id))
        .collect::<Result<_, _>>()?;
    let ids: BTreeSet<&str> = indexed[0].keys().copied().collect();
    for (i, run) in indexed.iter().enumerate().skip(1) {
        let other: BTreeSet<&str> = run.keys().copied().collect();
        if other != ids {
            let missing = ids.symmetric_difference(&other).next().unwrap();
            return Err(EvalError::RunMismatch(format!(
                "run {} and run 1 disagree on report {missing:?}",
                i + 1
            )));
        }
    }
    if ids.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let rows = QuestionId::all()
        .map(|q| {
            let agreeing = ids
                .iter()
                .filter(|id| {
                    let first = indexed[0][*id].findings.value(q);
                    indexed[1..]
                        .iter()
                        .all(|run| run[*id].findings.value(q) == first)
                })
                .count();
            ConsistencyRow {
                question: q,
                question_text: q.text().to_string(),
                k: runs.len(),
                agree_fraction: agreeing as f64 / ids.len() as f64,
            }
        })
        .collect();
    Ok(ConsistencyReport {
        k: runs.len(),
        n_reports: ids.len(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub question: QuestionId,
    pub question_text: String,
    pub a: Scores,
    pub b: Scores,
    pub delta: Scores,
}

/// Pairs two metric reports question by question; `delta` is `b - a`.
pub fn compare_metrics(
    a: &MetricsReport,
    b: &MetricsReport,
) -> Result<Vec<ComparisonRow>, EvalError> {
    a.check_schema()?;
    b.check_schema()?;
    Ok(a.rows
        .iter()
        .zip(&b.rows)
        .map(|(ra, rb)| ComparisonRow {
            question: ra.question,
            question_text: ra.question_text.clone(),
            a: ra.scores,
            b: rb.scores,
            delta: Scores {
                accuracy: rb.scores.accuracy - ra.scores.accuracy,
                precision: rb.scores.precision - ra.scores.precision,
                recall: rb.scores.recall - ra.scores.recall,
                f1: rb.scores.f1 - ra.scores.f1,
                zero_division: ra.scores.zero_division || rb.scores.zero_division,
            },
        })
        .collect())
}

const TEXT_WIDTH: usize = 42;

pub fn render_metrics_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<4}{:<TEXT_WIDTH$}{:>10}{:>10}{:>10}{:>10}",
        "No.", "Question", "Accuracy", "Precision", "Recall", "F1 score"
    );
    for row in &report.rows {
        let s = &row.scores;
        let _ = writeln!(
            out,
            "{:<4}{:<TEXT_WIDTH$}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{}",
            row.question.get(),
            row.question_text,
            s.accuracy,
            s.precision,
            s.recall,
            s.f1,
            if s.zero_division { " *" } else { "" }
        );
    }
    if report.rows.iter().any(|r| r.scores.zero_division) {
        let _ = writeln!(out, "* zero denominator; value reported as 0");
    }
    out
}

pub fn render_comparison_table(rows: &[ComparisonRow], label_a: &str, label_b: &str) -> String {
    let mut out = String::new();
    let group = |label: &str| format!("{label:<40}");
    let _ = writeln!(
        out,
        "{:<4}{:<TEXT_WIDTH$}{}{}Delta (B - A)",
        "",
        "",
        group(label_a),
        group(label_b)
    );
    let head = format!(
        "{:>10}{:>10}{:>10}{:>10}",
        "Accuracy", "Precision", "Recall", "F1 score"
    );
    let _ = writeln!(
        out,
        "{:<4}{:<TEXT_WIDTH$}{head}{head}{head}",
        "No.", "Question"
    );
    let cells = |s: &Scores| {
        format!(
            "{:>10.3}{:>10.3}{:>10.3}{:>10.3}",
            s.accuracy, s.precision, s.recall, s.f1
        )
    };
    let deltas = |s: &Scores| {
        format!(
            "{:>+10.3}{:>+10.3}{:>+10.3}{:>+10.3}",
            s.accuracy, s.precision, s.recall, s.f1
        )
    };
    for r in rows {
        let _ = writeln!(
            out,
            "{:<4}{:<TEXT_WIDTH$}{}{}{}",
            r.question.get(),
            r.question_text,
            cells(&r.a),
            cells(&r.b),
            deltas(&r.delta)
        );
    }
    out
}

pub fn render_consistency_table(report: &ConsistencyReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Agreement across {} runs over {} reports",
        report.k, report.n_reports
    );
    let _ = writeln!(
        out,
        "{:<4}{:<TEXT_WIDTH$}{:>10}",
        "No.", "Question", "Agree"
    );
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{:<4}{:<TEXT_WIDTH$}{:>10.3}",
            row.question.get(),
            row.question_text,
            row.agree_fraction
        );
    }
    out
}

/// Per-class one-vs-rest scores for the location question.
pub fn categorical_breakdown(
    preds: &[LocationCategory],
    golds: &[LocationCategory],
) -> Result<BTreeMap<LocationCategory, Scores>, EvalError> {
    check_lengths(preds.len(), golds.len())?;
    let classes: BTreeSet<LocationCategory> = preds.iter().chain(golds).copied().collect();
    classes
        .into_iter()
        .map(|class| {
            let p: Vec<bool> = preds.iter().map(|&x| x == class).collect();
            let g: Vec<bool> = golds.iter().map(|&x| x == class).collect();
            metrics_boolean(&p, &g).map(|s| (class, s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Findings;
    use LocationCategory::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-4
    }

    #[test]
    fn boolean_hand_computed() {
        let s = metrics_boolean(&[true, true, false, false], &[true, false, false, false]).unwrap();
        assert!(close(s.accuracy, 0.75));
        assert!(close(s.precision, 0.5));
        assert!(close(s.recall, 1.0));
        assert!(close(s.f1, 0.6667));
        assert!(!s.zero_division);
    }

    #[test]
    fn boolean_identity_and_zero_division() {
        let s = metrics_boolean(&[true, false, true], &[true, false, true]).unwrap();
        assert_eq!(
            (s.accuracy, s.precision, s.recall, s.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
        let z = metrics_boolean(&[false, false], &[false, false]).unwrap();
        assert_eq!(
            (z.accuracy, z.precision, z.recall, z.f1),
            (1.0, 0.0, 0.0, 0.0)
        );
        assert!(z.zero_division);
    }

    #[test]
    fn boolean_errors() {
        assert_eq!(
            metrics_boolean(&[true], &[true, false]),
            Err(EvalError::LengthMismatch { preds: 1, golds: 2 })
        );
        assert_eq!(metrics_boolean(&[], &[]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn categorical_hand_computed() {
        let s = metrics_categorical(
            &[LeftUpperLobe, LeftUpperLobe],
            &[LeftUpperLobe, RightLowerLobe],
        )
        .unwrap();
        assert!(close(s.accuracy, 0.5));
        assert!(close(s.precision, 0.25));
        assert!(close(s.recall, 0.5));
        assert!(close(s.f1, f1_score(0.25, 0.5)));
        let id = metrics_categorical(&[Other, RightMiddleLobe], &[Other, RightMiddleLobe]).unwrap();
        assert_eq!(
            (id.accuracy, id.precision, id.recall, id.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
        let single = metrics_categorical(&[LeftLowerLobe], &[LeftLowerLobe]).unwrap();
        assert_eq!(single.f1, 1.0);
    }

    #[test]
    fn numerical_direct_count() {
        let s =
            metrics_numerical(&[Some(23.0), Some(15.0)], &[Some(23.0), Some(14.0)], 0.1).unwrap();
        assert!(close(s.accuracy, 0.5));
        assert!(close(s.precision, 0.5));
        assert!(close(s.recall, 1.0));
        let id = metrics_numerical(&[Some(3.0), None], &[Some(3.0), None], 0.0).unwrap();
        assert_eq!((id.accuracy, id.precision, id.recall), (1.0, 1.0, 1.0));
        assert!(metrics_numerical(&[None], &[None], -1.0).is_err());
    }

    fn record(id: &str, f: Findings) -> StructuredRecord {
        StructuredRecord::new(id, f, vec![]).unwrap()
    }

    #[test]
    fn evaluate_perfect_and_missing_gold() {
        let mut f = Findings::empty();
        f.location = RightUpperLobe;
        f.long_diameter_mm = Some(20.0);
        f.solid = true;
        let records = vec![record("a", f.clone()), record("b", Findings::empty())];
        let golds = vec![
            GoldLabel::new("a", f).unwrap(),
            GoldLabel::new("b", Findings::empty()).unwrap(),
        ];
        let report = evaluate(&records, &golds, DEFAULT_TOLERANCE_MM).unwrap();
        assert_eq!(report.rows.len(), 11);
        assert!(report.rows.iter().all(|r| r.scores.accuracy == 1.0));
        assert_eq!(
            evaluate(&records, &golds[..1], 0.1),
            Err(EvalError::MissingGold("b".into()))
        );
        let dup = vec![records[0].clone(), records[0].clone()];
        assert!(matches!(
            evaluate(&dup, &golds, 0.1),
            Err(EvalError::DuplicateId(_))
        ));
    }

    #[test]
    fn consistency_identity_and_mismatch() {
        let run = vec![
            record("a", Findings::empty()),
            record("b", Findings::empty()),
        ];
        let report = consistency(&[run.clone(), run.clone(), run.clone()]).unwrap();
        assert!(report
            .rows
            .iter()
            .all(|r| r.agree_fraction == 1.0 && r.k == 3));
        let other = vec![
            record("c", Findings::empty()),
            record("d", Findings::empty()),
        ];
        assert!(matches!(
            consistency(&[run.clone(), other]),
            Err(EvalError::RunMismatch(_))
        ));
        assert_eq!(consistency(&[run]), Err(EvalError::TooFewRuns(1)));
    }

    #[test]
    fn compare_requires_eleven_rows() {
        let records = vec![record("a", Findings::empty())];
        let golds = vec![GoldLabel::new("a", Findings::empty()).unwrap()];
        let a = evaluate(&records, &golds, 0.1).unwrap();
        let rows = compare_metrics(&a, &a).unwrap();
        assert!(rows
            .iter()
            .all(|r| r.delta.accuracy == 0.0 && r.delta.f1 == 0.0));
        let mut short = a.clone();
        short.rows.pop();
        assert!(matches!(
            compare_metrics(&a, &short),
            Err(EvalError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn table_layout() {
        let records = vec![record("a", Findings::empty())];
        let golds = vec![GoldLabel::new("a", Findings::empty()).unwrap()];
        let report = evaluate(&records, &golds, 0.1).unwrap();
        let table = render_metrics_table(&report);
        assert!(table.starts_with("No."));
        assert!(table.contains("Accuracy"));
        assert!(table.contains("Are hilar lymph nodes enlarged"));
        assert_eq!(
            table
                .lines()
                .filter(|l| l.starts_with(char::is_numeric))
                .count(),
            11
        );
    }
}
