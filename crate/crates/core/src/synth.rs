//! Synthetic score datasets with planted contextual bias.
//!
//! Per sample: draw a class `y` uniformly, form clean log scores
//! `margin * onehot(y) + noise * z` with `z ~ N(0, I)`, then distort them as
//! `class_scale * clean + bias`. The additive bias is a shift in log space;
//! the per-class scale is a multiplicative distortion of the log scores.
//! Every sample draws from its own random stream, keyed by its index.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::score::{argmax_class, Dataset, ScoreRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub num_samples: usize,
    pub margin: f64,
    pub noise: f64,
    pub bias: Vec<f64>,
    pub class_scale: Option<Vec<f64>>,
    pub seed: u64,
}

impl SynthSpec {
    /// Bias-free, undistorted spec.
    pub fn clean(num_classes: usize, num_samples: usize, margin: f64, noise: f64, seed: u64) -> Self {
        Self {
            num_classes,
            num_samples,
            margin,
            noise,
            bias: vec![0.0; num_classes],
            class_scale: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::InvalidSpec(m));
        if self.num_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.num_samples == 0 {
            return fail("num_samples must be at least 1".into());
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return fail(format!("noise must be positive, got {}", self.noise));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return fail(format!("margin must be non-negative, got {}", self.margin));
        }
        if self.bias.len() != self.num_classes || self.bias.iter().any(|b| !b.is_finite()) {
            return fail(format!("bias must be {} finite values", self.num_classes));
        }
        if let Some(scale) = &self.class_scale {
            if scale.len() != self.num_classes || scale.iter().any(|s| !s.is_finite()) {
                return fail(format!("class_scale must be {} finite values", self.num_classes));
            }
        }
        Ok(())
    }

    pub fn scale(&self) -> Vec<f64> {
        self.class_scale
            .clone()
            .unwrap_or_else(|| vec![1.0; self.num_classes])
    }
}

/// What was planted, plus the undistorted scores for oracle runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bias: Vec<f64>,
    pub class_scale: Vec<f64>,
    pub margin: f64,
    pub noise: f64,
    pub seed: u64,
    pub num_classes: usize,
    pub num_samples: usize,
    pub oracle_accuracy: f64,
    #[serde(skip)]
    pub clean_scores: Vec<Vec<f64>>,
    #[serde(skip)]
    pub labels: Vec<usize>,
}

impl GroundTruth {
    /// The clean scores as records, for running any calibrator bias-free.
    pub fn clean_records(&self) -> Vec<ScoreRecord> {
        self.clean_scores
            .iter()
            .zip(&self.labels)
            .enumerate()
            .map(|(i, (s, &y))| ScoreRecord::new(sample_id(i), s.clone(), Some(y)))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string(self).expect("ground truth serializes");
        text.push('\n');
        text
    }
}

pub fn sample_id(index: usize) -> String {
    format!("syn-{index:06}")
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates a labeled dataset and its ground truth. Deterministic in `spec`.
pub fn generate_dataset(spec: &SynthSpec) -> Result<(Dataset, GroundTruth), SynthError> {
    spec.validate()?;
    let j = spec.num_classes;
    let scale = spec.scale();
    let mut records = Vec::with_capacity(spec.num_samples);
    let mut clean_scores = Vec::with_capacity(spec.num_samples);
    let mut labels = Vec::with_capacity(spec.num_samples);
    for i in 0..spec.num_samples {
        let mut rng = rng::stream(spec.seed, "sample", i as u64);
        let y = rng.random_range(0..j);
        let clean: Vec<f64> = (0..j)
            .map(|c| {
                let z = normal(&mut rng);
                if c == y {
                    spec.margin + spec.noise * z
                } else {
                    spec.noise * z
                }
            })
            .collect();
        let scores = clean
            .iter()
            .zip(&scale)
            .zip(&spec.bias)
            .map(|((x, s), b)| s * x + b)
            .collect();
        records.push(ScoreRecord::new(sample_id(i), scores, Some(y)));
        clean_scores.push(clean);
        labels.push(y);
    }
    let correct = clean_scores
        .iter()
        .zip(&labels)
        .filter(|(s, &y)| argmax_class(s) == y)
        .count();
    let truth = GroundTruth {
        bias: spec.bias.clone(),
        class_scale: scale,
        margin: spec.margin,
        noise: spec.noise,
        seed: spec.seed,
        num_classes: j,
        num_samples: spec.num_samples,
        oracle_accuracy: correct as f64 / spec.num_samples as f64,
        clean_scores,
        labels,
    };
    let dataset = Dataset::new(records).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    Ok((dataset, truth))
}

/// Which probe the fabricated prior vectors stand in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    ContentFree,
    RandomText,
}

impl PriorKind {
    /// Probe counts: three content-free tokens, twenty random-text draws.
    pub fn default_count(self) -> usize {
        match self {
            PriorKind::ContentFree => 3,
            PriorKind::RandomText => 20,
        }
    }

    fn label(self) -> &'static str {
        match self {
            PriorKind::ContentFree => "prior-content_free",
            PriorKind::RandomText => "prior-random_text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricateOptions {
    /// Standard deviation of the independent noise on each entry.
    pub noise: f64,
    /// Systematic error added to every vector (an unfair probe).
    pub offset: Option<Vec<f64>>,
}

impl Default for FabricateOptions {
    fn default() -> Self {
        Self {
            noise: 0.1,
            offset: None,
        }
    }
}

/// Prior score vectors centered on the planted bias (plus any offset).
pub fn fabricate_priors(
    spec: &SynthSpec,
    kind: PriorKind,
    count: usize,
    options: &FabricateOptions,
) -> Result<Vec<Vec<f64>>, SynthError> {
    spec.validate()?;
    if count == 0 {
        return Err(SynthError::InvalidSpec("prior count must be at least 1".into()));
    }
    if !(options.noise >= 0.0 && options.noise.is_finite()) {
        return Err(SynthError::InvalidSpec("prior noise must be non-negative".into()));
    }
    let j = spec.num_classes;
    let offset = options.offset.clone().unwrap_or_else(|| vec![0.0; j]);
    if offset.len() != j || offset.iter().any(|o| !o.is_finite()) {
        return Err(SynthError::InvalidSpec(format!("offset must be {j} finite values")));
    }
    Ok((0..count)
        .map(|t| {
            let mut rng = rng::stream(spec.seed, kind.label(), t as u64);
            (0..j)
                .map(|c| spec.bias[c] + offset[c] + options.noise * normal(&mut rng))
                .collect()
        })
        .collect())
}

/// A Gaussian mixture planted on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    /// Component means; each must be a probability vector.
    pub means: Vec<Vec<f64>>,
    /// Scale of the centered Gaussian noise; the per-coordinate standard
    /// deviation is `spread * sqrt((d - 1) / d)`.
    pub spread: f64,
    pub num_samples: usize,
    pub seed: u64,
}

/// Draws points `mean + spread * (z - mean(z))` so they stay on the simplex,
/// rejecting draws that leave `[0, 1]`. Components are used in turn.
pub fn generate_mixture(spec: &MixtureSpec) -> Result<(Vec<Vec<f64>>, Vec<usize>), SynthError> {
    let k = spec.means.len();
    if k == 0 || spec.num_samples == 0 || spec.spread.is_nan() || spec.spread <= 0.0 {
        return Err(SynthError::InvalidSpec("mixture needs components, samples and spread".into()));
    }
    let d = spec.means[0].len();
    for m in &spec.means {
        let total: f64 = m.iter().sum();
        if m.len() != d || (total - 1.0).abs() > 1e-9 || m.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(SynthError::InvalidSpec("mixture means must be probability vectors".into()));
        }
    }
    let mut points = Vec::with_capacity(spec.num_samples);
    let mut labels = Vec::with_capacity(spec.num_samples);
    for i in 0..spec.num_samples {
        let component = i % k;
        let mut rng = rng::stream(spec.seed, "mixture", i as u64);
        let point = loop {
            let z: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let centered = z.iter().sum::<f64>() / d as f64;
            let p: Vec<f64> = spec.means[component]
                .iter()
                .zip(&z)
                .map(|(m, zi)| m + spec.spread * (zi - centered))
                .collect();
            if p.iter().all(|v| (0.0..=1.0).contains(v)) {
                break p;
            }
        };
        points.push(point);
        labels.push(component);
    }
    Ok((points, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::dataset_to_jsonl;

    #[test]
    fn single_sample() {
        let (ds, truth) = generate_dataset(&SynthSpec::clean(3, 1, 8.0, 1.0, 5)).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(ds.records()[0].label.is_some());
        assert_eq!(truth.clean_scores.len(), 1);
    }

    #[test]
    fn same_spec_same_bytes() {
        let spec = SynthSpec {
            bias: vec![1.0, -2.0],
            class_scale: Some(vec![1.0, 0.5]),
            ..SynthSpec::clean(2, 64, 4.0, 1.5, 11)
        };
        let (a, ta) = generate_dataset(&spec).unwrap();
        let (b, tb) = generate_dataset(&spec).unwrap();
        assert_eq!(dataset_to_jsonl(a.records()), dataset_to_jsonl(b.records()));
        assert_eq!(ta.to_json(), tb.to_json());
        let other = SynthSpec { seed: 12, ..spec };
        let (c, _) = generate_dataset(&other).unwrap();
        assert_ne!(dataset_to_jsonl(a.records()), dataset_to_jsonl(c.records()));
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SynthSpec::clean(2, 10, 8.0, 1.0, 0);
        spec.bias = vec![3.0, 0.0, 0.0];
        assert!(generate_dataset(&spec).is_err());
        assert!(generate_dataset(&SynthSpec::clean(2, 0, 8.0, 1.0, 0)).is_err());
        assert!(generate_dataset(&SynthSpec::clean(2, 5, 8.0, 0.0, 0)).is_err());
        assert!(generate_dataset(&SynthSpec::clean(2, 5, -1.0, 1.0, 0)).is_err());
    }

    #[test]
    fn zero_noise_priors_equal_the_bias() {
        let spec = SynthSpec {
            bias: vec![0.5, -1.5, 2.0],
            ..SynthSpec::clean(3, 10, 8.0, 1.0, 3)
        };
        let opts = FabricateOptions { noise: 0.0, offset: None };
        let vs = fabricate_priors(&spec, PriorKind::ContentFree, 3, &opts).unwrap();
        assert_eq!(vs, vec![spec.bias.clone(); 3]);
        let opts = FabricateOptions { noise: 0.0, offset: Some(vec![1.0, 0.0, -1.0]) };
        let vs = fabricate_priors(&spec, PriorKind::ContentFree, 2, &opts).unwrap();
        assert_eq!(vs[1], vec![1.5, -1.5, 1.0]);
        assert!(fabricate_priors(&spec, PriorKind::RandomText, 0, &opts).is_err());
    }

    #[test]
    fn mixture_points_stay_on_the_simplex() {
        let spec = MixtureSpec {
            means: vec![vec![0.35, 0.65], vec![0.65, 0.35]],
            spread: 0.05,
            num_samples: 500,
            seed: 2,
        };
        let (points, labels) = generate_mixture(&spec).unwrap();
        assert_eq!(points.len(), 500);
        assert_eq!(labels[..4], [0, 1, 0, 1]);
        for p in &points {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
