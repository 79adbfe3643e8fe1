//! Contextual-bias calibration for classifier score vectors.
//!
//! The crate ingests per-sample class scores (log-probability scale) and
//! applies one of several prediction rules on top of the plain argmax:
//!
//! - `icl`: uncalibrated argmax.
//! - `cc`: divide probabilities by a content-free prior (a rotation of the
//!   binary decision boundary).
//! - `dc`: subtract a random-text prior in log space (a shift).
//! - `pc`: Gaussian-mixture clustering of the output probabilities with a
//!   cluster-to-class assignment (a non-linear boundary).
//! - `bc`: subtract the batch-mean score vector, full-batch or as a running
//!   estimate over mini-batches.
//! - `bcl`: `bc` with a scalar strength chosen by grid search on labeled data.
//!
//! Synthetic data with planted bias ([`synth`]), decision-boundary rasters
//! ([`boundary`]) and evaluation ([`metrics`]) make the behavior of each rule
//! checkable without any model in the loop.

pub mod boundary;
pub mod calibrate;
pub mod cli;
pub mod gmm;
pub mod hungarian;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod score;
pub mod synth;

pub use calibrate::{CalibrationConfig, CalibrationError, Method, Prediction, PriorSpace};
pub use gmm::{EmConfig, GmmError, GmmModel};
pub use metrics::EvalReport;
pub use score::{argmax_class, normalize, Dataset, Prior, Provenance, ScoreError, ScoreRecord};
