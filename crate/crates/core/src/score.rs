//! Score vectors, datasets and priors shared by every calibrator.
//!
//! Scores live on the log-probability scale. They do not need to be
//! normalized; [`normalize`] is the only bridge to the probability scale.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("empty input: no records")]
    Empty,
    #[error("line {line}: record `{id}` has {found} scores, expected {expected}")]
    DimensionMismatch {
        id: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: record `{id}` has {found} scores, at least 2 classes are required")]
    TooFewClasses { id: String, line: usize, found: usize },
    #[error("line {line}: record `{id}` has a non-finite score at index {index}")]
    NonFinite { id: String, line: usize, index: usize },
    #[error("line {line}: record `{id}` has label {label}, but there are only {classes} classes")]
    LabelOutOfRange {
        id: String,
        line: usize,
        label: usize,
        classes: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{found} class names given for {expected} classes")]
    ClassNames { expected: usize, found: usize },
}

/// One sample's class scores with an optional gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl ScoreRecord {
    pub fn new(id: impl Into<String>, scores: Vec<f64>, label: Option<usize>) -> Self {
        Self {
            id: id.into(),
            scores,
            label,
        }
    }
}

/// A record together with the (1-based) line it was read from.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub line: usize,
    pub record: ScoreRecord,
}

/// A validated, ordered collection of records sharing one class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<ScoreRecord>,
    num_classes: usize,
    class_names: Option<Vec<String>>,
}

impl Dataset {
    /// Validates records, numbering them 1.. in the given order.
    pub fn new(records: Vec<ScoreRecord>) -> Result<Self, ScoreError> {
        validate_dataset(
            records
                .into_iter()
                .enumerate()
                .map(|(i, record)| RawRecord { line: i + 1, record })
                .collect(),
        )
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self, ScoreError> {
        if names.len() != self.num_classes {
            return Err(ScoreError::ClassNames {
                expected: self.num_classes,
                found: names.len(),
            });
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ScoreRecord> {
        self.records
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// True when every record carries a label.
    pub fn is_labeled(&self) -> bool {
        self.records.iter().all(|r| r.label.is_some())
    }
}

/// Checks every record invariant and builds a [`Dataset`], keeping order.
pub fn validate_dataset(raw: Vec<RawRecord>) -> Result<Dataset, ScoreError> {
    let first = raw.first().ok_or(ScoreError::Empty)?;
    let num_classes = first.record.scores.len();
    if num_classes < 2 {
        return Err(ScoreError::TooFewClasses {
            id: first.record.id.clone(),
            line: first.line,
            found: num_classes,
        });
    }
    for RawRecord { line, record } in &raw {
        if record.scores.len() != num_classes {
            return Err(ScoreError::DimensionMismatch {
                id: record.id.clone(),
                line: *line,
                expected: num_classes,
                found: record.scores.len(),
            });
        }
        if let Some(index) = record.scores.iter().position(|s| !s.is_finite()) {
            return Err(ScoreError::NonFinite {
                id: record.id.clone(),
                line: *line,
                index,
            });
        }
        if let Some(label) = record.label {
            if label >= num_classes {
                return Err(ScoreError::LabelOutOfRange {
                    id: record.id.clone(),
                    line: *line,
                    label,
                    classes: num_classes,
                });
            }
        }
    }
    Ok(Dataset {
        records: raw.into_iter().map(|r| r.record).collect(),
        num_classes,
        class_names: None,
    })
}

/// Where a prior estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ContentFree,
    RandomText,
    BatchMean,
    Running,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::ContentFree => "content_free",
            Provenance::RandomText => "random_text",
            Provenance::BatchMean => "batch_mean",
            Provenance::Running => "running",
        }
    }
}

/// A contextual-bias estimate on the log-probability scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub values: Vec<f64>,
    pub provenance: Provenance,
    pub support_count: usize,
}

impl Prior {
    /// The all-zero prior. Calibrating with it is the identity on log scores.
    pub fn zero(num_classes: usize, provenance: Provenance) -> Self {
        Self {
            values: vec![0.0; num_classes],
            provenance,
            support_count: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.values.len()
    }
}

/// Log-sum-exp with max subtraction.
pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Log-softmax: `scores - log_sum_exp(scores)`.
pub fn log_normalize(scores: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(scores);
    scores.iter().map(|s| s - lse).collect()
}

/// Softmax with max subtraction. Log scale in, probability scale out.
pub fn normalize(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the maximum entry; ties go to the lowest index.
pub fn argmax_class(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
