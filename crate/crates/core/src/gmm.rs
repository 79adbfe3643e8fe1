//! Gaussian mixtures fit by Expectation-Maximization over probability
//! vectors, best-of-N random restarts, and cluster-to-class assignment.
//!
//! Probability vectors sit on the simplex, so every covariance is singular
//! along the all-ones direction. A fixed ridge `covariance_regularizer * I`
//! is added in each M-step. EM then climbs the penalized objective
//!
//! ```text
//! F = sum_i log sum_j w_j N(x_i | mu_j, S_j) exp(-reg/2 * tr(S_j^-1))
//! ```
//!
//! whose exact M-step is the weighted sample covariance plus the ridge, so
//! the reported trace is monotone. Prediction uses the plain weighted density.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{Method, Prediction};
use crate::hungarian::max_weight_assignment;
use crate::rng;
use crate::score::{argmax_class, log_sum_exp, normalize, ScoreRecord};

/// Components whose total responsibility falls below this are collapsed.
const MIN_COMPONENT_MASS: f64 = 1e-8;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("{points} data points cannot support {components} components")]
    TooFewPoints { points: usize, components: usize },
    #[error("data point {index}: {reason}")]
    InvalidData { index: usize, reason: String },
    #[error("component {component} collapsed to zero responsibility at iteration {iteration}")]
    ComponentCollapse { component: usize, iteration: usize },
    #[error("covariance of component {component} is not positive definite")]
    NotPositiveDefinite { component: usize },
    #[error("all {restarts} restarts failed")]
    AllRestartsFailed { restarts: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid EM configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    pub restarts: usize,
    pub rel_tolerance: f64,
    pub covariance_regularizer: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            restarts: 100,
            rel_tolerance: 1e-6,
            covariance_regularizer: 1e-6,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<(), GmmError> {
        if self.max_iterations == 0 || self.restarts == 0 {
            return Err(GmmError::InvalidConfig(
                "max_iterations and restarts must be positive".into(),
            ));
        }
        if !(self.rel_tolerance > 0.0 && self.covariance_regularizer > 0.0) {
            return Err(GmmError::InvalidConfig(
                "rel_tolerance and covariance_regularizer must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A fitted mixture. Covariances are stored row-major, `dim * dim` each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
    /// `assignment[component] = class`.
    pub assignment: Vec<usize>,
    pub final_log_likelihood: f64,
}

impl GmmModel {
    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn covariance(&self, component: usize) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.covariances[component])
    }

    /// Checks the structural invariants of a fitted model.
    pub fn validate(&self) -> Result<(), GmmError> {
        let k = self.num_components();
        let d = self.dim();
        if k == 0 || d == 0 {
            return Err(GmmError::InvalidModel("no components".into()));
        }
        if self.means.len() != k || self.covariances.len() != k || self.assignment.len() != k {
            return Err(GmmError::InvalidModel("component count mismatch".into()));
        }
        if self.weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(GmmError::InvalidModel("negative weight".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(GmmError::InvalidModel(format!("weights sum to {total}")));
        }
        for (j, (mean, cov)) in self.means.iter().zip(&self.covariances).enumerate() {
            if mean.len() != d || cov.len() != d * d {
                return Err(GmmError::InvalidModel(format!("component {j} has wrong dimensions")));
            }
            if mean.iter().chain(cov).any(|v| !v.is_finite()) {
                return Err(GmmError::InvalidModel(format!("component {j} is not finite")));
            }
            for a in 0..d {
                for b in 0..a {
                    if (cov[a * d + b] - cov[b * d + a]).abs() > 1e-9 {
                        return Err(GmmError::InvalidModel(format!(
                            "covariance {j} is not symmetric"
                        )));
                    }
                }
            }
        }
        let mut seen = vec![false; k];
        for &class in &self.assignment {
            if class >= k || std::mem::replace(&mut seen[class], true) {
                return Err(GmmError::InvalidModel("assignment is not a permutation".into()));
            }
        }
        Components::new(self, 0.0).map(|_| ())
    }
}

/// Cached Cholesky factors for density evaluation.
struct Components {
    dim: usize,
    log_weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Lower Cholesky factors, row-major.
    chol: Vec<Vec<f64>>,
    /// `log det S + dim * ln(2 pi)`
    log_norm: Vec<f64>,
    /// `reg / 2 * tr(S^-1)`, zero when evaluating plain densities.
    penalty: Vec<f64>,
}

impl Components {
    fn new(model: &GmmModel, regularizer: f64) -> Result<Self, GmmError> {
        let d = model.dim();
        let k = model.num_components();
        let mut chol = Vec::with_capacity(k);
        let mut log_norm = Vec::with_capacity(k);
        let mut penalty = Vec::with_capacity(k);
        for j in 0..k {
            let factor = model
                .covariance(j)
                .cholesky()
                .ok_or(GmmError::NotPositiveDefinite { component: j })?;
            let l = factor.l();
            let log_det: f64 = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
            if !log_det.is_finite() {
                return Err(GmmError::NotPositiveDefinite { component: j });
            }
            let trace_inv = if regularizer > 0.0 {
                let inv_l = l
                    .clone()
                    .try_inverse()
                    .ok_or(GmmError::NotPositiveDefinite { component: j })?;
                inv_l.iter().map(|v| v * v).sum::<f64>()
            } else {
                0.0
            };
            let mut rows = Vec::with_capacity(d * d);
            for r in 0..d {
                for c in 0..d {
                    rows.push(l[(r, c)]);
                }
            }
            chol.push(rows);
            log_norm.push(log_det + d as f64 * LN_2PI);
            penalty.push(0.5 * regularizer * trace_inv);
        }
        Ok(Self {
            dim: d,
            log_weights: model
                .weights
                .iter()
                .map(|w| w.max(f64::MIN_POSITIVE).ln())
                .collect(),
            means: model.means.clone(),
            chol,
            log_norm,
            penalty,
        })
    }

    /// `log w_j + log N(x | mu_j, S_j) - penalty_j` for every component.
    fn log_terms(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let d = self.dim;
        for (j, slot) in out.iter_mut().enumerate() {
            let l = &self.chol[j];
            let mean = &self.means[j];
            // forward substitution: L y = x - mu
            let mut maha = 0.0;
            for r in 0..d {
                let mut acc = x[r] - mean[r];
                for c in 0..r {
                    acc -= l[r * d + c] * scratch[c];
                }
                let y = acc / l[r * d + r];
                scratch[r] = y;
                maha += y * y;
            }
            *slot = self.log_weights[j] - 0.5 * (self.log_norm[j] + maha) - self.penalty[j];
        }
    }
}

/// Result of one EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub model: GmmModel,
    /// Objective before the first M-step and after each one.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

fn validate_data(data: &[Vec<f64>], components: usize) -> Result<usize, GmmError> {
    if data.len() < components || components == 0 {
        return Err(GmmError::TooFewPoints {
            points: data.len(),
            components,
        });
    }
    let d = data[0].len();
    for (index, x) in data.iter().enumerate() {
        if x.len() != d || d == 0 {
            return Err(GmmError::InvalidData {
                index,
                reason: format!("expected dimension {d}, found {}", x.len()),
            });
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(GmmError::InvalidData {
                index,
                reason: "entries must be probabilities in [0, 1]".into(),
            });
        }
    }
    Ok(d)
}

/// E-step: fills responsibilities and returns the penalized log-likelihood.
fn expectation(
    data: &[Vec<f64>],
    comps: &Components,
    resp: &mut [Vec<f64>],
) -> f64 {
    let mut scratch = vec![0.0; comps.dim];
    let mut total = 0.0;
    for (x, r) in data.iter().zip(resp.iter_mut()) {
        comps.log_terms(x, r, &mut scratch);
        let lse = log_sum_exp(r);
        for v in r.iter_mut() {
            *v = (*v - lse).exp();
        }
        total += lse;
    }
    total
}

fn maximization(
    data: &[Vec<f64>],
    resp: &[Vec<f64>],
    regularizer: f64,
    iteration: usize,
) -> Result<GmmModel, GmmError> {
    let n = data.len();
    let d = data[0].len();
    let k = resp[0].len();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covariances = Vec::with_capacity(k);
    for j in 0..k {
        let mass: f64 = resp.iter().map(|r| r[j]).sum();
        if mass.is_nan() || mass < MIN_COMPONENT_MASS {
            return Err(GmmError::ComponentCollapse {
                component: j,
                iteration,
            });
        }
        let mut mean = vec![0.0; d];
        for (x, r) in data.iter().zip(resp) {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += r[j] * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= mass);
        let mut cov = vec![0.0; d * d];
        let mut diff = vec![0.0; d];
        for (x, r) in data.iter().zip(resp) {
            for a in 0..d {
                diff[a] = x[a] - mean[a];
            }
            for a in 0..d {
                for b in 0..=a {
                    cov[a * d + b] += r[j] * diff[a] * diff[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov[a * d + b] / mass;
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
            cov[a * d + a] += regularizer;
        }
        weights.push(mass / n as f64);
        means.push(mean);
        covariances.push(cov);
    }
    Ok(GmmModel {
        weights,
        means,
        covariances,
        assignment: (0..k).collect(),
        final_log_likelihood: f64::NAN,
    })
}

/// Runs EM from `init` until `max_iterations` M-steps or until the relative
/// change of the objective drops below `rel_tolerance`.
pub fn fit_em(data: &[Vec<f64>], init: GmmModel, config: &EmConfig) -> Result<EmFit, GmmError> {
    config.validate()?;
    let k = init.num_components();
    let d = validate_data(data, k)?;
    if init.dim() != d {
        return Err(GmmError::InvalidModel(format!(
            "initial model has dimension {}, data has {d}",
            init.dim()
        )));
    }
    let reg = config.covariance_regularizer;
    let mut model = init;
    let mut resp = vec![vec![0.0; k]; data.len()];
    let mut objective = expectation(data, &Components::new(&model, reg)?, &mut resp);
    let mut trace = vec![objective];
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let next = maximization(data, &resp, reg, iterations)?;
        iterations += 1;
        let comps = Components::new(&next, reg)?;
        let updated = expectation(data, &comps, &mut resp);
        trace.push(updated);
        model = next;
        let change = updated - objective;
        let scale = objective.abs().max(f64::MIN_POSITIVE);
        objective = updated;
        if change.abs() < config.rel_tolerance * scale {
            break;
        }
    }
    if !objective.is_finite() {
        return Err(GmmError::InvalidModel("objective is not finite".into()));
    }
    model.final_log_likelihood = objective;
    Ok(EmFit {
        model,
        trace,
        iterations,
    })
}

/// MLE covariance of all points, row-major.
fn global_covariance(data: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = data[0].len();
    let n = data.len() as f64;
    let mut mean = vec![0.0; d];
    for x in data {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; d * d];
    for x in data {
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= n);
    (mean, cov)
}

/// Initial model for restart `restart`: distance-weighted seeding of the
/// means from the data, uniform weights, global covariance plus the ridge.
pub fn restart_init(
    data: &[Vec<f64>],
    components: usize,
    config: &EmConfig,
    restart: usize,
) -> Result<GmmModel, GmmError> {
    let d = validate_data(data, components)?;
    let mut rng = rng::stream(config.seed, "gmm-restart", restart as u64);
    let n = data.len();
    let mut chosen: Vec<usize> = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = data.iter().map(|x| sq_dist(x, &data[chosen[0]])).collect();
    while chosen.len() < components {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in nearest.iter().enumerate() {
                acc += w;
                if *w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| nearest.iter().rposition(|w| *w > 0.0).unwrap())
        } else {
            // Every remaining point duplicates a chosen one.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        for (i, x) in data.iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(x, &data[pick]));
        }
    }
    let (_, mut cov) = global_covariance(data);
    for a in 0..d {
        cov[a * d + a] += config.covariance_regularizer;
    }
    Ok(GmmModel {
        weights: vec![1.0 / components as f64; components],
        means: chosen.iter().map(|&i| data[i].clone()).collect(),
        covariances: vec![cov; components],
        assignment: (0..components).collect(),
        final_log_likelihood: f64::NAN,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiRestartFit {
    pub model: GmmModel,
    pub best_restart: usize,
    pub failed_restarts: usize,
    /// Final objective per restart, `None` for failed ones.
    pub restart_objectives: Vec<Option<f64>>,
}

/// Fits `config.restarts` independent EM runs and keeps the best objective.
///
/// Ties go to the lowest restart index; the result does not depend on how
/// restarts are scheduled across threads.
pub fn multi_restart_fit(
    data: &[Vec<f64>],
    components: usize,
    config: &EmConfig,
) -> Result<MultiRestartFit, GmmError> {
    config.validate()?;
    validate_data(data, components)?;
    let fits: Vec<Result<EmFit, GmmError>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| fit_em(data, restart_init(data, components, config, r)?, config))
        .collect();
    let mut best: Option<(usize, GmmModel)> = None;
    let mut objectives = Vec::with_capacity(fits.len());
    for (r, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok(fit) => {
                let ll = fit.model.final_log_likelihood;
                objectives.push(Some(ll));
                let better = best
                    .as_ref()
                    .is_none_or(|(_, b)| ll > b.final_log_likelihood);
                if better {
                    best = Some((r, fit.model));
                }
            }
            Err(e) => {
                log::debug!("restart {r} failed: {e}");
                objectives.push(None);
            }
        }
    }
    let failed = objectives.iter().filter(|o| o.is_none()).count();
    let (best_restart, model) = best.ok_or(GmmError::AllRestartsFailed {
        restarts: config.restarts,
    })?;
    Ok(MultiRestartFit {
        model,
        best_restart,
        failed_restarts: failed,
        restart_objectives: objectives,
    })
}

/// Chooses the component-to-class bijection maximizing the summed mean
/// coordinate `sum_j mu_j[class(j)]`, and stores it in the model.
pub fn assign_clusters(model: &mut GmmModel) -> Result<&[usize], GmmError> {
    if model.dim() != model.num_components() {
        return Err(GmmError::InvalidModel(format!(
            "assignment needs one component per class: {} components in dimension {}",
            model.num_components(),
            model.dim()
        )));
    }
    model.assignment = max_weight_assignment(&model.means);
    Ok(&model.assignment)
}

/// Fits the prototypical-calibration mixture on normalized record scores.
pub fn fit_pc(records: &[ScoreRecord], config: &EmConfig) -> Result<MultiRestartFit, GmmError> {
    let j = records.first().map_or(0, |r| r.scores.len());
    let data: Vec<Vec<f64>> = records.iter().map(|r| normalize(&r.scores)).collect();
    let mut fit = multi_restart_fit(&data, j, config)?;
    assign_clusters(&mut fit.model)?;
    Ok(fit)
}

/// Evaluates PC predictions with one set of cached factors.
pub struct PcPredictor {
    comps: Components,
    assignment: Vec<usize>,
}

impl PcPredictor {
    pub fn new(model: &GmmModel) -> Result<Self, GmmError> {
        model.validate()?;
        if model.dim() != model.num_components() {
            return Err(GmmError::InvalidModel("model dimension differs from class count".into()));
        }
        Ok(Self {
            comps: Components::new(model, 0.0)?,
            assignment: model.assignment.clone(),
        })
    }

    /// Per-class `log(w_j N(p | mu_j, S_j))`, reordered by the assignment.
    pub fn class_log_densities(&self, probabilities: &[f64]) -> Vec<f64> {
        let k = self.assignment.len();
        let mut terms = vec![0.0; k];
        let mut scratch = vec![0.0; self.comps.dim];
        self.comps.log_terms(probabilities, &mut terms, &mut scratch);
        let mut by_class = vec![0.0; k];
        for (component, &class) in self.assignment.iter().enumerate() {
            by_class[class] = terms[component];
        }
        by_class
    }

    pub fn predict(&self, record: &ScoreRecord) -> Result<Prediction, GmmError> {
        if record.scores.len() != self.assignment.len() {
            return Err(GmmError::InvalidData {
                index: 0,
                reason: format!(
                    "record `{}` has {} scores, model has {} classes",
                    record.id,
                    record.scores.len(),
                    self.assignment.len()
                ),
            });
        }
        let calibrated = self.class_log_densities(&normalize(&record.scores));
        Ok(Prediction {
            id: record.id.clone(),
            raw_scores: record.scores.clone(),
            predicted_class: argmax_class(&calibrated),
            calibrated_scores: calibrated,
            method: Method::Pc,
            gamma: None,
        })
    }
}

/// PC prediction for one record.
pub fn predict_pc(record: &ScoreRecord, model: &GmmModel) -> Result<Prediction, GmmError> {
    PcPredictor::new(model)?.predict(record)
}

pub fn predict_pc_all(records: &[ScoreRecord], model: &GmmModel) -> Result<Vec<Prediction>, GmmError> {
    let predictor = PcPredictor::new(model)?;
    records.par_iter().map(|r| predictor.predict(r)).collect()
}

/// Fitted model plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub model: GmmModel,
    pub config: EmConfig,
}
