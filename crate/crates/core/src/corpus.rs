//! JSONL corpus files: one `{"id", "text", "gold"?}` object per line.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{Findings, GoldLabel, Report, SchemaError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate report id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("report {0:?} has no gold label")]
    MissingGold(String),
    #[error("corpus I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Findings>,
}

impl CorpusEntry {
    pub fn report(&self) -> Report {
        Report {
            id: self.id.clone(),
            text: self.text.clone(),
        }
    }

    pub fn gold_label(&self) -> Option<GoldLabel> {
        self.gold.clone().map(|findings| GoldLabel {
            report_id: self.id.clone(),
            findings,
        })
    }
}

fn check_entry(entry: &CorpusEntry) -> Result<(), SchemaError> {
    entry.report().validate()?;
    if let Some(gold) = &entry.gold {
        gold.validate(&entry.id)?;
    }
    Ok(())
}

pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CorpusEntry =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        check_entry(&entry).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(entry.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: entry.id,
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusEntry>, CorpusError> {
    parse_corpus(BufReader::new(File::open(path)?))
}

pub fn write_corpus(entries: &[CorpusEntry], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path)?);
    for entry in entries {
        serde_json::to_writer(&mut out, entry).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Gold labels for every entry; fails on the first entry without one.
pub fn gold_labels(entries: &[CorpusEntry]) -> Result<Vec<GoldLabel>, CorpusError> {
    entries
        .iter()
        .map(|e| {
            e.gold_label()
                .ok_or_else(|| CorpusError::MissingGold(e.id.clone()))
        })
        .collect()
}
