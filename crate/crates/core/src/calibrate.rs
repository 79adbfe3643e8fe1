//! Prediction rules: ICL, CC, DC, BC (full batch and running), BCL.
//!
//! All rules work on log-scale scores and end in [`argmax_class`], so ties
//! always go to the lowest class index.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{argmax_class, log_normalize, normalize, Prior, Provenance, ScoreRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("no prior vectors given")]
    EmptyPrior,
    #[error("empty batch")]
    EmptyBatch,
    #[error("dimension mismatch: expected {expected} classes, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("prior contains a non-finite value")]
    NonFinitePrior,
    #[error("degenerate prior: normalized probability of class {class} is zero")]
    DegeneratePrior { class: usize },
    #[error("prior provenance `{found}` cannot be used with {method}")]
    Provenance { method: Method, found: &'static str },
    #[error("running prior update with n = {n} needs a current running prior")]
    MissingRunningPrior { n: usize },
    #[error("record `{id}` has no label")]
    Unlabeled { id: String },
    #[error("invalid gamma grid: {0}")]
    InvalidGrid(String),
    #[error("gamma must be finite")]
    NonFiniteGamma,
}

/// Which prediction rule to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Icl,
    Cc,
    Dc,
    Pc,
    Bc,
    Bcl,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Icl,
        Method::Cc,
        Method::Dc,
        Method::Pc,
        Method::Bc,
        Method::Bcl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Icl => "icl",
            Method::Cc => "cc",
            Method::Dc => "dc",
            Method::Pc => "pc",
            Method::Bc => "bc",
            Method::Bcl => "bcl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected icl, cc, dc, pc, bc or bcl)"))
    }
}

/// Space in which batch priors are averaged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorSpace {
    /// Mean of the raw log scores.
    #[default]
    Log,
    /// Log of the mean normalized probability vector.
    Prob,
}

impl FromStr for PriorSpace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log" => Ok(PriorSpace::Log),
            "prob" => Ok(PriorSpace::Prob),
            _ => Err(format!("unknown prior space `{s}` (expected log or prob)")),
        }
    }
}

impl fmt::Display for PriorSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorSpace::Log => "log",
            PriorSpace::Prob => "prob",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub method: Method,
    pub prior_space: PriorSpace,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_steps: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            method: Method::Bc,
            prior_space: PriorSpace::Log,
            gamma_min: -5.0,
            gamma_max: 5.0,
            gamma_steps: 101,
            seed: 0,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.gamma_min.is_finite() && self.gamma_max.is_finite()) {
            return Err(CalibrationError::InvalidGrid("bounds must be finite".into()));
        }
        if self.gamma_min >= self.gamma_max {
            return Err(CalibrationError::InvalidGrid(format!(
                "gamma_min {} must be below gamma_max {}",
                self.gamma_min, self.gamma_max
            )));
        }
        if self.method == Method::Bcl && self.gamma_steps < 2 {
            return Err(CalibrationError::InvalidGrid(format!(
                "gamma_steps must be at least 2, got {}",
                self.gamma_steps
            )));
        }
        Ok(())
    }

    pub fn gamma_grid(&self) -> Result<Vec<f64>, CalibrationError> {
        self.validate()?;
        gamma_grid(self.gamma_min, self.gamma_max, self.gamma_steps)
    }
}

/// Evenly spaced grid including both endpoints.
pub fn gamma_grid(min: f64, max: f64, steps: usize) -> Result<Vec<f64>, CalibrationError> {
    if steps < 2 || min.is_nan() || max.is_nan() || min >= max {
        return Err(CalibrationError::InvalidGrid(format!(
            "need min < max and at least 2 steps, got [{min}, {max}] with {steps}"
        )));
    }
    let span = max - min;
    let last = (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| if i + 1 == steps { max } else { min + span * i as f64 / last })
        .collect())
}

/// One calibrated prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub raw_scores: Vec<f64>,
    pub calibrated_scores: Vec<f64>,
    pub predicted_class: usize,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl Prediction {
    fn new(record: &ScoreRecord, calibrated: Vec<f64>, method: Method, gamma: Option<f64>) -> Self {
        Self {
            id: record.id.clone(),
            raw_scores: record.scores.clone(),
            predicted_class: argmax_class(&calibrated),
            calibrated_scores: calibrated,
            method,
            gamma,
        }
    }
}

fn check_prior(prior: &Prior, num_classes: usize) -> Result<(), CalibrationError> {
    if prior.values.len() != num_classes {
        return Err(CalibrationError::DimensionMismatch {
            expected: prior.values.len(),
            found: num_classes,
        });
    }
    if prior.values.iter().any(|v| !v.is_finite()) {
        return Err(CalibrationError::NonFinitePrior);
    }
    Ok(())
}

fn subtract_scaled(scores: &[f64], prior: &[f64], gamma: f64) -> Vec<f64> {
    scores.iter().zip(prior).map(|(s, p)| s - gamma * p).collect()
}

/// Uncalibrated argmax.
pub fn predict_icl(record: &ScoreRecord) -> Prediction {
    Prediction::new(record, record.scores.clone(), Method::Icl, None)
}

pub fn predict_icl_all(records: &[ScoreRecord]) -> Vec<Prediction> {
    records.iter().map(predict_icl).collect()
}

/// Entrywise mean of prior score vectors, tagged with `provenance`.
pub fn estimate_prior(vectors: &[Vec<f64>], provenance: Provenance) -> Result<Prior, CalibrationError> {
    let first = vectors.first().ok_or(CalibrationError::EmptyPrior)?;
    let j = first.len();
    let mut sum = vec![0.0; j];
    for v in vectors {
        if v.len() != j {
            return Err(CalibrationError::DimensionMismatch {
                expected: j,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CalibrationError::NonFinitePrior);
        }
        for (acc, x) in sum.iter_mut().zip(v) {
            *acc += x;
        }
    }
    let n = vectors.len() as f64;
    Ok(Prior {
        values: sum.into_iter().map(|s| s / n).collect(),
        provenance,
        support_count: vectors.len(),
    })
}

/// Content-free prior: the mean log score over the content-free probes.
pub fn estimate_cf_prior(vectors: &[Vec<f64>]) -> Result<Prior, CalibrationError> {
    estimate_prior(vectors, Provenance::ContentFree)
}

/// Random-text prior: the mean log score over the random in-domain probes.
pub fn estimate_random_prior(vectors: &[Vec<f64>]) -> Result<Prior, CalibrationError> {
    estimate_prior(vectors, Provenance::RandomText)
}

/// Contextual calibration: `diag(p_hat)^-1 p` on normalized probabilities.
///
/// The stored scores are `log p_j - log p_hat_j`, whose argmax is that of the
/// rescaled probability vector.
pub fn calibrate_cc(record: &ScoreRecord, prior: &Prior) -> Result<Prediction, CalibrationError> {
    check_prior(prior, record.scores.len())?;
    if let Some(class) = normalize(&prior.values).iter().position(|&p| p == 0.0) {
        return Err(CalibrationError::DegeneratePrior { class });
    }
    let log_p = log_normalize(&record.scores);
    let log_prior = log_normalize(&prior.values);
    let calibrated = log_p.iter().zip(&log_prior).map(|(a, b)| a - b).collect();
    Ok(Prediction::new(record, calibrated, Method::Cc, None))
}

/// Domain-context calibration: subtract the prior in log space.
pub fn calibrate_dc(record: &ScoreRecord, prior: &Prior) -> Result<Prediction, CalibrationError> {
    if prior.provenance == Provenance::ContentFree {
        return Err(CalibrationError::Provenance {
            method: Method::Dc,
            found: prior.provenance.as_str(),
        });
    }
    check_prior(prior, record.scores.len())?;
    let calibrated = subtract_scaled(&record.scores, &prior.values, 1.0);
    Ok(Prediction::new(record, calibrated, Method::Dc, None))
}

fn batch_mean_in_space(batch: &[ScoreRecord], space: PriorSpace) -> Result<Vec<f64>, CalibrationError> {
    let first = batch.first().ok_or(CalibrationError::EmptyBatch)?;
    let j = first.scores.len();
    let mut sum = vec![0.0; j];
    for record in batch {
        if record.scores.len() != j {
            return Err(CalibrationError::DimensionMismatch {
                expected: j,
                found: record.scores.len(),
            });
        }
        match space {
            PriorSpace::Log => sum.iter_mut().zip(&record.scores).for_each(|(a, s)| *a += s),
            PriorSpace::Prob => sum
                .iter_mut()
                .zip(normalize(&record.scores))
                .for_each(|(a, p)| *a += p),
        }
    }
    let m = batch.len() as f64;
    Ok(sum.into_iter().map(|s| s / m).collect())
}

fn from_space(mean: Vec<f64>, space: PriorSpace) -> Vec<f64> {
    match space {
        PriorSpace::Log => mean,
        PriorSpace::Prob => mean.into_iter().map(f64::ln).collect(),
    }
}

fn to_space(values: &[f64], space: PriorSpace) -> Vec<f64> {
    match space {
        PriorSpace::Log => values.to_vec(),
        PriorSpace::Prob => values.iter().map(|v| v.exp()).collect(),
    }
}

/// Batch contextual prior: the mean score over the batch.
pub fn estimate_batch_prior(batch: &[ScoreRecord], space: PriorSpace) -> Result<Prior, CalibrationError> {
    if batch.len() == 1 {
        log::warn!(
            "batch prior from a single record: calibrated scores of that record are all zero"
        );
    }
    let mean = batch_mean_in_space(batch, space)?;
    let values = from_space(mean, space);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CalibrationError::NonFinitePrior);
    }
    Ok(Prior {
        values,
        provenance: Provenance::BatchMean,
        support_count: batch.len(),
    })
}

/// How mini-batch means are combined into a running prior.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunningWeighting {
    /// Weight each batch by its sample count. Equal batches reduce to
    /// `n/(n+1)` and `1/(n+1)`; unequal ones still reproduce the full-batch mean.
    #[default]
    PerSample,
    /// `n/(n+1) * current + 1/(n+1) * batch mean` regardless of batch sizes.
    PerBatch,
}

/// Folds one more mini-batch into a running prior.
///
/// `n` is the number of mini-batches already folded in; with `n = 0` the
/// current prior is ignored and the result is the batch mean.
pub fn update_running_prior(
    current: Option<&Prior>,
    batch: &[ScoreRecord],
    n: usize,
    space: PriorSpace,
    weighting: RunningWeighting,
) -> Result<Prior, CalibrationError> {
    let batch_mean = batch_mean_in_space(batch, space)?;
    let m = batch.len();
    if n == 0 {
        let values = from_space(batch_mean, space);
        return Ok(Prior {
            values,
            provenance: Provenance::Running,
            support_count: m,
        });
    }
    let current = current.ok_or(CalibrationError::MissingRunningPrior { n })?;
    check_prior(current, batch_mean.len())?;
    let seen = current.support_count;
    let weight = match weighting {
        RunningWeighting::PerSample => m as f64 / (seen + m) as f64,
        RunningWeighting::PerBatch => 1.0 / (n + 1) as f64,
    };
    let prev = to_space(&current.values, space);
    let mixed = prev
        .iter()
        .zip(&batch_mean)
        .map(|(p, b)| p + weight * (b - p))
        .collect();
    Ok(Prior {
        values: from_space(mixed, space),
        provenance: Provenance::Running,
        support_count: seen + m,
    })
}

/// Owns a running prior and the count of batches folded into it.
#[derive(Debug, Clone)]
pub struct RunningPrior {
    prior: Option<Prior>,
    batches: usize,
    space: PriorSpace,
    weighting: RunningWeighting,
}

impl RunningPrior {
    pub fn new(space: PriorSpace, weighting: RunningWeighting) -> Self {
        Self {
            prior: None,
            batches: 0,
            space,
            weighting,
        }
    }

    pub fn update(&mut self, batch: &[ScoreRecord]) -> Result<&Prior, CalibrationError> {
        let next = update_running_prior(
            self.prior.as_ref(),
            batch,
            self.batches,
            self.space,
            self.weighting,
        )?;
        self.batches += 1;
        Ok(self.prior.insert(next))
    }

    pub fn prior(&self) -> Option<&Prior> {
        self.prior.as_ref()
    }

    pub fn batches_seen(&self) -> usize {
        self.batches
    }
}

fn shift_all(
    records: &[ScoreRecord],
    prior: &Prior,
    gamma: f64,
    method: Method,
    tag_gamma: bool,
) -> Result<Vec<Prediction>, CalibrationError> {
    for record in records {
        check_prior(prior, record.scores.len())?;
    }
    Ok(records
        .par_iter()
        .map(|record| {
            // gamma = 0 is the identity, including the sign of zero scores.
            let calibrated = if gamma == 0.0 {
                record.scores.clone()
            } else {
                subtract_scaled(&record.scores, &prior.values, gamma)
            };
            Prediction::new(record, calibrated, method, tag_gamma.then_some(gamma))
        })
        .collect())
}

/// Batch calibration: subtract the batch (or running) prior from every record.
pub fn calibrate_bc(records: &[ScoreRecord], prior: &Prior) -> Result<Vec<Prediction>, CalibrationError> {
    if !matches!(prior.provenance, Provenance::BatchMean | Provenance::Running) {
        return Err(CalibrationError::Provenance {
            method: Method::Bc,
            found: prior.provenance.as_str(),
        });
    }
    shift_all(records, prior, 1.0, Method::Bc, false)
}

/// Batch calibration with strength: `scores - gamma * prior`.
pub fn calibrate_bcl(
    records: &[ScoreRecord],
    prior: &Prior,
    gamma: f64,
) -> Result<Vec<Prediction>, CalibrationError> {
    if !gamma.is_finite() {
        return Err(CalibrationError::NonFiniteGamma);
    }
    shift_all(records, prior, gamma, Method::Bcl, true)
}

/// Fraction of predictions matching the label of the record at the same position.
pub fn positional_accuracy(predictions: &[Prediction], records: &[ScoreRecord]) -> f64 {
    let correct = predictions
        .iter()
        .zip(records)
        .filter(|(p, r)| r.label == Some(p.predicted_class))
        .count();
    correct as f64 / records.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthSearch {
    pub gamma: f64,
    pub metric: f64,
    pub table: Vec<SweepRow>,
}

/// Evaluates `metric` at every grid point and picks the best strength.
///
/// Ties prefer the strength closest to 1 (plain BC), then the smaller one.
pub fn search_strength_over<F>(
    records: &[ScoreRecord],
    prior: &Prior,
    grid: &[f64],
    metric: F,
) -> Result<StrengthSearch, CalibrationError>
where
    F: Fn(&[Prediction], &[ScoreRecord]) -> f64,
{
    if records.is_empty() {
        return Err(CalibrationError::EmptyBatch);
    }
    if grid.is_empty() {
        return Err(CalibrationError::InvalidGrid("empty grid".into()));
    }
    if let Some(r) = records.iter().find(|r| r.label.is_none()) {
        return Err(CalibrationError::Unlabeled { id: r.id.clone() });
    }
    let mut table = Vec::with_capacity(grid.len());
    for &gamma in grid {
        let predictions = calibrate_bcl(records, prior, gamma)?;
        table.push(SweepRow {
            gamma,
            metric: metric(&predictions, records),
        });
    }
    let best = table
        .iter()
        .copied()
        .reduce(|best, row| {
            let better = row.metric > best.metric
                || (row.metric == best.metric
                    && ((row.gamma - 1.0).abs() < (best.gamma - 1.0).abs()
                        || ((row.gamma - 1.0).abs() == (best.gamma - 1.0).abs()
                            && row.gamma < best.gamma)));
            if better {
                row
            } else {
                best
            }
        })
        .expect("grid is non-empty");
    Ok(StrengthSearch {
        gamma: best.gamma,
        metric: best.metric,
        table,
    })
}

/// Grid search over the configured strength range, scored by accuracy.
pub fn search_strength(
    records: &[ScoreRecord],
    prior: &Prior,
    config: &CalibrationConfig,
) -> Result<StrengthSearch, CalibrationError> {
    let grid = config.gamma_grid()?;
    search_strength_over(records, prior, &grid, positional_accuracy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, scores: &[f64], label: Option<usize>) -> ScoreRecord {
        ScoreRecord::new(id, scores.to_vec(), label)
    }

    fn batch_prior(values: &[f64]) -> Prior {
        Prior {
            values: values.to_vec(),
            provenance: Provenance::BatchMean,
            support_count: 2,
        }
    }

    #[test]
    fn cf_prior_examples() {
        let p = estimate_cf_prior(&[vec![0.0, -1.0]]).unwrap();
        assert_eq!(p.values, vec![0.0, -1.0]);
        assert_eq!(p.provenance, Provenance::ContentFree);
        assert_eq!(p.support_count, 1);
        let p = estimate_cf_prior(&[vec![0.0, -2.0], vec![-2.0, 0.0]]).unwrap();
        assert_eq!(p.values, vec![-1.0, -1.0]);
        assert_eq!(estimate_cf_prior(&[]).unwrap_err(), CalibrationError::EmptyPrior);
        assert!(matches!(
            estimate_cf_prior(&[vec![0.0, 0.0], vec![0.0]]),
            Err(CalibrationError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cc_examples() {
        let uniform = estimate_cf_prior(&[vec![-0.7, -0.7]]).unwrap();
        for scores in [[0.3, -1.0], [-4.0, 2.0], [1.0, 1.0]] {
            let r = rec("x", &scores, None);
            assert_eq!(
                calibrate_cc(&r, &uniform).unwrap().predicted_class,
                predict_icl(&r).predicted_class
            );
        }

        // p = [.5, .5], p_hat = [.8, .2]: W p = [0.625, 2.5].
        let prior = estimate_cf_prior(&[vec![0.8f64.ln(), 0.2f64.ln()]]).unwrap();
        let pred = calibrate_cc(&rec("x", &[0.0, 0.0], None), &prior).unwrap();
        assert_eq!(pred.predicted_class, 1);
        let wp: Vec<f64> = pred.calibrated_scores.iter().map(|s| s.exp()).collect();
        assert!((wp[0] - 0.625).abs() < 1e-12 && (wp[1] - 2.5).abs() < 1e-12);

        // p proportional to p_hat: every calibrated entry equal, tie to class 0.
        let prior = estimate_cf_prior(&[vec![1.5, -0.25, 3.0]]).unwrap();
        let pred = calibrate_cc(&rec("x", &[1.5, -0.25, 3.0], None), &prior).unwrap();
        assert!(pred.calibrated_scores.iter().all(|&s| s == pred.calibrated_scores[0]));
        assert_eq!(pred.predicted_class, 0);
    }

    #[test]
    fn cc_rejects_degenerate_prior() {
        let prior = estimate_cf_prior(&[vec![0.0, -800.0]]).unwrap();
        let err = calibrate_cc(&rec("x", &[0.0, 0.0], None), &prior).unwrap_err();
        assert_eq!(err, CalibrationError::DegeneratePrior { class: 1 });
    }

    #[test]
    fn dc_examples() {
        let zero = Prior::zero(3, Provenance::RandomText);
        for s in [[0.0, 1.0, -1.0], [5.0, 5.0, 5.0], [-3.0, -2.0, -9.0]] {
            let r = rec("x", &s, None);
            assert_eq!(calibrate_dc(&r, &zero).unwrap().predicted_class, argmax_class(&s));
        }
        let prior = Prior {
            values: vec![3.0, 0.0],
            provenance: Provenance::RandomText,
            support_count: 20,
        };
        let pred = calibrate_dc(&rec("x", &[2.0, 1.0], None), &prior).unwrap();
        assert_eq!(pred.calibrated_scores, vec![-1.0, 1.0]);
        assert_eq!(pred.predicted_class, 1);
        assert!(matches!(
            calibrate_dc(&rec("x", &[2.0, 1.0, 0.0], None), &prior),
            Err(CalibrationError::DimensionMismatch { .. })
        ));
        let cf = Prior { provenance: Provenance::ContentFree, ..prior };
        assert!(matches!(
            calibrate_dc(&rec("x", &[2.0, 1.0], None), &cf),
            Err(CalibrationError::Provenance { .. })
        ));
    }

    #[test]
    fn batch_prior_examples() {
        let batch = [rec("a", &[2.0, 0.0], None), rec("b", &[0.0, 2.0], None)];
        let p = estimate_batch_prior(&batch, PriorSpace::Log).unwrap();
        assert_eq!(p.values, vec![1.0, 1.0]);
        assert_eq!(p.support_count, 2);
        assert_eq!(p.provenance, Provenance::BatchMean);

        let single = [rec("a", &[0.25, -3.0, 7.0], None)];
        assert_eq!(estimate_batch_prior(&single, PriorSpace::Log).unwrap().values, vec![0.25, -3.0, 7.0]);

        // prob space: mean of [0.5,0.5] twice is [0.5,0.5].
        let p = estimate_batch_prior(&[rec("a", &[1.0, 1.0], None), rec("b", &[-4.0, -4.0], None)], PriorSpace::Prob)
            .unwrap();
        assert!((p.values[0] - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(estimate_batch_prior(&[], PriorSpace::Log).unwrap_err(), CalibrationError::EmptyBatch);
    }

    #[test]
    fn running_prior_examples() {
        let b0 = [rec("a", &[1.0, 3.0], None), rec("b", &[3.0, 1.0], None)];
        let b1 = [rec("c", &[0.0, -4.0], None), rec("d", &[0.0, 0.0], None)];
        let ignored = batch_prior(&[100.0, 100.0]);
        let r0 = update_running_prior(Some(&ignored), &b0, 0, PriorSpace::Log, RunningWeighting::PerSample)
            .unwrap();
        assert_eq!(r0.values, vec![2.0, 2.0]);
        assert_eq!(r0.provenance, Provenance::Running);
        let r1 = update_running_prior(Some(&r0), &b1, 1, PriorSpace::Log, RunningWeighting::PerSample).unwrap();
        // m0 = [2, 2], m1 = [0, -2]
        assert_eq!(r1.values, vec![1.0, 0.0]);
        assert_eq!(r1.support_count, 4);
        assert_eq!(
            update_running_prior(Some(&r1), &[], 2, PriorSpace::Log, RunningWeighting::PerSample).unwrap_err(),
            CalibrationError::EmptyBatch
        );
        assert!(matches!(
            update_running_prior(None, &b1, 3, PriorSpace::Log, RunningWeighting::PerSample),
            Err(CalibrationError::MissingRunningPrior { n: 3 })
        ));
    }

    #[test]
    fn per_batch_weighting_averages_batch_means() {
        let b0 = [rec("a", &[1.0, 0.0], None)];
        let b1 = [rec("b", &[3.0, 0.0], None), rec("c", &[3.0, 0.0], None), rec("d", &[3.0, 0.0], None)];
        let mut per_batch = RunningPrior::new(PriorSpace::Log, RunningWeighting::PerBatch);
        per_batch.update(&b0).unwrap();
        assert_eq!(per_batch.update(&b1).unwrap().values, vec![2.0, 0.0]);
        let mut per_sample = RunningPrior::new(PriorSpace::Log, RunningWeighting::PerSample);
        per_sample.update(&b0).unwrap();
        assert_eq!(per_sample.update(&b1).unwrap().values, vec![2.5, 0.0]);
        assert_eq!(per_sample.batches_seen(), 2);
    }

    #[test]
    fn bc_examples() {
        let same: Vec<_> = (0..4).map(|i| rec(&i.to_string(), &[0.3, -1.2, 4.0], None)).collect();
        let prior = estimate_batch_prior(&same, PriorSpace::Log).unwrap();
        for p in calibrate_bc(&same, &prior).unwrap() {
            assert!(p.calibrated_scores.iter().all(|&s| s == 0.0));
            assert_eq!(p.predicted_class, 0);
        }
        let batch = [rec("a", &[2.0, 0.0], None), rec("b", &[0.0, 2.0], None)];
        let preds = calibrate_bc(&batch, &batch_prior(&[1.0, 1.0])).unwrap();
        assert_eq!(preds.iter().map(|p| p.predicted_class).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(preds[1].id, "b");
        let cf = Prior { provenance: Provenance::ContentFree, ..batch_prior(&[1.0, 1.0]) };
        assert!(calibrate_bc(&batch, &cf).is_err());
    }

    #[test]
    fn bcl_examples() {
        let batch = [rec("a", &[1.0, 0.0], None), rec("b", &[-0.0, 2.0], None)];
        let prior = batch_prior(&[1.0, 0.0]);
        let p = calibrate_bcl(&batch, &prior, 2.0).unwrap();
        assert_eq!(p[0].calibrated_scores, vec![-1.0, 0.0]);
        assert_eq!(p[0].predicted_class, 1);
        assert_eq!(p[0].gamma, Some(2.0));
        let neg = batch_prior(&[-1.0, -1.0]);
        let p = calibrate_bcl(&batch, &neg, 0.0).unwrap();
        assert_eq!(p[1].calibrated_scores[0].to_bits(), (-0.0f64).to_bits());
        assert_eq!(calibrate_bcl(&batch, &prior, f64::NAN).unwrap_err(), CalibrationError::NonFiniteGamma);
    }

    #[test]
    fn grid_contract() {
        let g = CalibrationConfig::default().gamma_grid().unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], -5.0);
        assert_eq!(g[50], 0.0);
        assert_eq!(g[60], 1.0);
        assert_eq!(g[100], 5.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        let cfg = CalibrationConfig { method: Method::Bcl, gamma_steps: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = CalibrationConfig { gamma_min: 1.0, gamma_max: 1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn search_examples() {
        let labeled = [
            rec("a", &[2.0, 0.0], Some(0)),
            rec("b", &[1.0, 0.5], Some(1)),
            rec("c", &[0.0, 1.0], Some(1)),
        ];
        let prior = estimate_batch_prior(&labeled, PriorSpace::Log).unwrap();
        let s = search_strength_over(&labeled, &prior, &[0.0], positional_accuracy).unwrap();
        assert_eq!(s.gamma, 0.0);
        assert_eq!(s.metric, positional_accuracy(&predict_icl_all(&labeled), &labeled));

        let s = search_strength_over(&labeled, &prior, &[0.0, 0.5, 1.0], positional_accuracy).unwrap();
        assert!(s.metric >= s.table[0].metric && s.metric >= s.table[2].metric);

        // flat metric: the strength closest to 1 wins, then the smaller one.
        let s = search_strength_over(&labeled, &prior, &[-1.0, 0.5, 1.5, 3.0], |_, _| 0.7).unwrap();
        assert_eq!(s.gamma, 0.5);

        let unlabeled = [rec("u", &[0.0, 1.0], None)];
        assert!(matches!(
            search_strength_over(&unlabeled, &prior, &[0.0], positional_accuracy),
            Err(CalibrationError::Unlabeled { .. })
        ));
        assert_eq!(
            search_strength_over(&[], &prior, &[0.0], positional_accuracy).unwrap_err(),
            CalibrationError::EmptyBatch
        );
    }
}
