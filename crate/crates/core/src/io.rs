//! Text formats: JSONL datasets, prior files, prediction lines.
//!
//! Every float written by this module uses 17 significant digits so that
//! output is byte-stable and parses back to the identical `f64`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::calibrate::Prediction;
use crate::score::{validate_dataset, Dataset, Provenance, RawRecord, ScoreError, ScoreRecord};

/// Formats a float with 17 significant digits in JSON-compatible exponent form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_vec(values: &[f64]) -> String {
    let mut out = String::from("[");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push(']');
    out
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

/// Parses JSON Lines into a validated dataset. Blank lines are skipped but
/// still counted for line numbers.
pub fn parse_dataset(text: &str) -> Result<Dataset, ScoreError> {
    let mut raw = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            continue;
        }
        let record: ScoreRecord =
            serde_json::from_str(trimmed).map_err(|e| ScoreError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        raw.push(RawRecord {
            line: line_no,
            record,
        });
    }
    validate_dataset(raw)
}

pub fn record_line(record: &ScoreRecord) -> String {
    let mut line = format!(
        "{{\"id\":{},\"scores\":{}",
        json_string(&record.id),
        fmt_vec(&record.scores)
    );
    if let Some(label) = record.label {
        write!(line, ",\"label\":{label}").unwrap();
    }
    line.push('}');
    line
}

/// Serializes records as JSONL, one LF-terminated line per record.
pub fn dataset_to_jsonl(records: &[ScoreRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&record_line(record));
        out.push('\n');
    }
    out
}

/// On-disk prior: a list of raw score vectors plus where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorFile {
    pub provenance: Provenance,
    pub vectors: Vec<Vec<f64>>,
}

pub fn prior_file_to_json(file: &PriorFile) -> String {
    let vectors: Vec<String> = file.vectors.iter().map(|v| fmt_vec(v)).collect();
    format!(
        "{{\"provenance\":{},\"vectors\":[{}]}}\n",
        json_string(file.provenance.as_str()),
        vectors.join(",")
    )
}

pub fn parse_prior_file(text: &str) -> Result<PriorFile, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn prediction_line(p: &Prediction) -> String {
    let mut line = format!(
        "{{\"id\":{},\"predicted_class\":{},\"calibrated_scores\":{}",
        json_string(&p.id),
        p.predicted_class,
        fmt_vec(&p.calibrated_scores)
    );
    if let Some(g) = p.gamma {
        write!(line, ",\"gamma\":{}", fmt_f64(g)).unwrap();
    }
    line.push('}');
    line
}

pub fn predictions_to_jsonl(predictions: &[Prediction]) -> String {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&prediction_line(p));
        out.push('\n');
    }
    out
}

/// The subset of a prediction line needed for evaluation.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    pub predicted_class: usize,
    #[serde(default)]
    pub calibrated_scores: Vec<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionLine>, ScoreError> {
    let mut out = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| ScoreError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
