//! Accuracy, prediction frequencies and per-class recall, plus mean/std
//! summaries across seeded runs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::ScoreRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{predictions} predictions for {records} records")]
    CountMismatch { predictions: usize, records: usize },
    #[error("no labeled record with id `{0}`")]
    UnknownId(String),
    #[error("record `{0}` has no label")]
    MissingLabel(String),
    #[error("id `{0}` appears more than once")]
    DuplicateId(String),
    #[error("predicted class {class} for `{id}` is out of range for {classes} classes")]
    ClassOutOfRange { id: String, class: usize, classes: usize },
    #[error("nothing to evaluate")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class_frequency: Vec<f64>,
    /// `None` for classes with no labeled samples.
    pub per_class_recall: Vec<Option<f64>>,
    pub n: usize,
    pub correct: usize,
}

impl EvalReport {
    /// Fixed-order plain-text table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "n         {}\ncorrect   {}\naccuracy  {:.6}\n\nclass  frequency  recall\n",
            self.n, self.correct, self.accuracy
        );
        for (c, (f, r)) in self
            .per_class_frequency
            .iter()
            .zip(&self.per_class_recall)
            .enumerate()
        {
            let recall = r.map_or_else(|| "-".to_string(), |r| format!("{r:.6}"));
            out.push_str(&format!("{c:<5}  {f:<9.6}  {recall}\n"));
        }
        out
    }
}

/// Scores `(id, predicted_class)` pairs against labeled records, matched by id.
pub fn evaluate<'a, I>(predictions: I, records: &[ScoreRecord]) -> Result<EvalReport, MetricsError>
where
    I: IntoIterator<Item = (&'a str, usize)>,
{
    let classes = records.first().map_or(0, |r| r.scores.len());
    let mut labels: HashMap<&str, usize> = HashMap::with_capacity(records.len());
    for r in records {
        let label = r.label.ok_or_else(|| MetricsError::MissingLabel(r.id.clone()))?;
        if labels.insert(r.id.as_str(), label).is_some() {
            return Err(MetricsError::DuplicateId(r.id.clone()));
        }
    }
    let mut predicted = vec![0usize; classes];
    let mut support = vec![0usize; classes];
    let mut hits = vec![0usize; classes];
    let mut seen: HashMap<&str, ()> = HashMap::with_capacity(records.len());
    let mut n = 0;
    for (id, class) in predictions {
        let &label = labels.get(id).ok_or_else(|| MetricsError::UnknownId(id.to_string()))?;
        if seen.insert(id, ()).is_some() {
            return Err(MetricsError::DuplicateId(id.to_string()));
        }
        if class >= classes {
            return Err(MetricsError::ClassOutOfRange {
                id: id.to_string(),
                class,
                classes,
            });
        }
        n += 1;
        predicted[class] += 1;
        support[label] += 1;
        if class == label {
            hits[label] += 1;
        }
    }
    if n != records.len() {
        return Err(MetricsError::CountMismatch {
            predictions: n,
            records: records.len(),
        });
    }
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let correct: usize = hits.iter().sum();
    Ok(EvalReport {
        accuracy: correct as f64 / n as f64,
        per_class_frequency: predicted.iter().map(|&c| c as f64 / n as f64).collect(),
        per_class_recall: hits
            .iter()
            .zip(&support)
            .map(|(&h, &s)| (s > 0).then(|| h as f64 / s as f64))
            .collect(),
        n,
        correct,
    })
}

/// Convenience wrapper over calibrated predictions.
pub fn evaluate_predictions(
    predictions: &[crate::calibrate::Prediction],
    records: &[ScoreRecord],
) -> Result<EvalReport, MetricsError> {
    evaluate(
        predictions.iter().map(|p| (p.id.as_str(), p.predicted_class)),
        records,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: usize,
    pub accuracy: MeanStd,
    pub per_class_frequency: Vec<MeanStd>,
    /// Over the runs where the class had labeled samples.
    pub per_class_recall: Vec<Option<MeanStd>>,
}

pub fn summarize_runs(reports: &[EvalReport]) -> Result<RunSummary, MetricsError> {
    let first = reports.first().ok_or(MetricsError::Empty)?;
    let classes = first.per_class_frequency.len();
    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let freq = (0..classes)
        .map(|c| {
            let v: Vec<f64> = reports.iter().map(|r| r.per_class_frequency[c]).collect();
            MeanStd::of(&v).expect("at least one report")
        })
        .collect();
    let recall = (0..classes)
        .map(|c| {
            let v: Vec<f64> = reports.iter().filter_map(|r| r.per_class_recall[c]).collect();
            MeanStd::of(&v)
        })
        .collect();
    Ok(RunSummary {
        runs: reports.len(),
        accuracy: MeanStd::of(&acc).expect("at least one report"),
        per_class_frequency: freq,
        per_class_recall: recall,
    })
}
