use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{
    extract_boundaries, validate_record_with, LabelSequence, MixedTextRecord, Pattern, TokenSequence,
};
use crate::metrics::{Prediction, ScoredBoundary};

/// One line of a dataset file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetLine {
    id: String,
    tokens: Vec<String>,
    labels: Vec<usize>,
    pattern: Pattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundaries: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding_key: Option<String>,
}

fn lines<R: Read>(reader: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    BufReader::new(reader)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
}

/// Parses and validates line-delimited records. Blank lines are skipped.
pub fn read_dataset<R: Read>(reader: R) -> Result<Vec<MixedTextRecord>> {
    let mut out = Vec::new();
    for (line_no, line) in lines(reader) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DatasetLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let record = MixedTextRecord {
            id: parsed.id,
            tokens: TokenSequence(parsed.tokens),
            gold_labels: LabelSequence(parsed.labels),
            pattern: parsed.pattern,
            embedding_key: parsed.embedding_key,
        };
        let mut violations = validate_record_with(&record, usize::MAX);
        if let Some(b) = parsed.boundaries {
            if violations.is_empty() && b != extract_boundaries(&record.gold_labels).into_inner() {
                violations.push("boundaries do not match labels".into());
            }
        }
        if !violations.is_empty() {
            return Err(Error::Validation {
                id: record.id,
                violations,
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<MixedTextRecord>> {
    read_dataset(File::open(path)?)
}

/// One JSON object per record, boundaries included.
pub fn write_dataset<W: Write>(writer: W, records: &[MixedTextRecord]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        let line = DatasetLine {
            id: r.id.clone(),
            tokens: r.tokens.0.clone(),
            labels: r.gold_labels.0.clone(),
            pattern: r.pattern,
            boundaries: Some(r.boundaries().into_inner()),
            embedding_key: r.embedding_key.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(records: &[MixedTextRecord], path: impl AsRef<Path>) -> Result<()> {
    write_dataset(File::create(path)?, records)
}

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub labels: Vec<usize>,
    pub boundaries: Vec<usize>,
    pub top_k: Vec<ScoredBoundary>,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, p: &Prediction) -> Self {
        Self {
            id: id.into(),
            labels: p.labels.0.clone(),
            boundaries: p.boundaries().into_inner(),
            top_k: p.top_k.clone(),
        }
    }

    pub fn to_prediction(&self) -> Prediction {
        Prediction {
            labels: LabelSequence(self.labels.clone()),
            top_k: self.top_k.clone(),
        }
    }
}

pub fn write_predictions<W: Write>(writer: W, predictions: &[PredictionRecord]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for p in predictions {
        serde_json::to_writer(&mut w, p).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_predictions(predictions: &[PredictionRecord], path: impl AsRef<Path>) -> Result<()> {
    write_predictions(File::create(path)?, predictions)
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (line_no, line) in lines(reader) {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    read_predictions(File::open(path)?)
}
