//! Binary decision boundaries: closed-form lines for the linear rules and
//! cell-center rasters for every rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{calibrate_cc, CalibrationError, Method};
use crate::gmm::{GmmError, GmmModel, PcPredictor};
use crate::io::fmt_f64;
use crate::score::{argmax_class, normalize, Prior, ScoreRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundaryError {
    #[error("boundaries are defined for 2 classes, got {0}")]
    NotBinary(usize),
    #[error("resolution must be at least 2, got {0}")]
    Resolution(usize),
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("method {0} has no linear boundary")]
    NotLinear(Method),
    #[error("mixture model is not fitted")]
    Unfitted,
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
}

/// Coordinates a boundary line is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySpace {
    /// `(p0, p1)` class probabilities.
    Probability,
    /// `(s0, s1)` log scores.
    LogScore,
}

/// The line `x0 = slope * x1 + offset`; class 0 on or above it
/// (`x0 - slope * x1 - offset >= 0`), class 1 below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearBoundary {
    pub space: BoundarySpace,
    pub slope: f64,
    pub offset: f64,
}

impl LinearBoundary {
    pub fn margin(&self, x0: f64, x1: f64) -> f64 {
        x0 - self.slope * x1 - self.offset
    }

    pub fn distance(&self, x0: f64, x1: f64) -> f64 {
        self.margin(x0, x1).abs() / (1.0 + self.slope * self.slope).sqrt()
    }

    pub fn classify(&self, x0: f64, x1: f64) -> usize {
        usize::from(self.margin(x0, x1) < 0.0)
    }

    /// Maps a point of `from` coordinates into this line's coordinates.
    pub fn to_own_space(&self, from: BoundarySpace, x0: f64, x1: f64) -> (f64, f64) {
        match (from, self.space) {
            (a, b) if a == b => (x0, x1),
            (BoundarySpace::Probability, BoundarySpace::LogScore) => (x0.ln(), x1.ln()),
            _ => (x0.exp(), x1.exp()),
        }
    }
}

/// Closed-form boundary of a linear rule for two classes.
///
/// `cc` rotates the ICL line about the origin of the probability square:
/// `p0 = (ph0 / ph1) p1`. `dc` and `bc` shift it in log-score space:
/// `s0 = s1 + (q0 - q1)`. `icl` is the diagonal.
pub fn derive_linear_boundary(method: Method, prior: &Prior) -> Result<LinearBoundary, BoundaryError> {
    if prior.values.len() != 2 {
        return Err(BoundaryError::NotBinary(prior.values.len()));
    }
    if prior.values.iter().any(|v| !v.is_finite()) {
        return Err(CalibrationError::NonFinitePrior.into());
    }
    match method {
        Method::Icl => Ok(LinearBoundary {
            space: BoundarySpace::Probability,
            slope: 1.0,
            offset: 0.0,
        }),
        Method::Cc => {
            let p = normalize(&prior.values);
            if let Some(class) = p.iter().position(|&v| v == 0.0) {
                return Err(CalibrationError::DegeneratePrior { class }.into());
            }
            Ok(LinearBoundary {
                space: BoundarySpace::Probability,
                slope: p[0] / p[1],
                offset: 0.0,
            })
        }
        Method::Dc | Method::Bc => Ok(LinearBoundary {
            space: BoundarySpace::LogScore,
            slope: 1.0,
            offset: prior.values[0] - prior.values[1],
        }),
        other => Err(BoundaryError::NotLinear(other)),
    }
}

/// What is being rasterized.
#[derive(Debug, Clone, Copy)]
pub enum BoundaryRule<'a> {
    Icl,
    Cc(&'a Prior),
    Dc(&'a Prior),
    Bc(&'a Prior),
    Pc(&'a GmmModel),
}

impl BoundaryRule<'_> {
    pub fn method(&self) -> Method {
        match self {
            BoundaryRule::Icl => Method::Icl,
            BoundaryRule::Cc(_) => Method::Cc,
            BoundaryRule::Dc(_) => Method::Dc,
            BoundaryRule::Bc(_) => Method::Bc,
            BoundaryRule::Pc(_) => Method::Pc,
        }
    }
}

/// Square region the raster covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RasterDomain {
    /// `[0, 1]^2` of class probabilities.
    Probability,
    /// `[min, max]^2` of log scores.
    LogScore { min: f64, max: f64 },
}

impl RasterDomain {
    fn bounds(&self) -> (f64, f64) {
        match *self {
            RasterDomain::Probability => (0.0, 1.0),
            RasterDomain::LogScore { min, max } => (min, max),
        }
    }

    pub fn space(&self) -> BoundarySpace {
        match self {
            RasterDomain::Probability => BoundarySpace::Probability,
            RasterDomain::LogScore { .. } => BoundarySpace::LogScore,
        }
    }

    /// Center of cell `index` out of `resolution` along one axis.
    pub fn center(&self, index: usize, resolution: usize) -> f64 {
        let (lo, hi) = self.bounds();
        lo + (index as f64 + 0.5) * (hi - lo) / resolution as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRaster {
    pub method: Method,
    pub resolution: usize,
    pub domain: RasterDomain,
    /// Row-major: `cells[row * resolution + col]`, rows step along the second
    /// coordinate, columns along the first.
    pub cells: Vec<usize>,
    pub analytic: Option<LinearBoundary>,
}

impl BoundaryRaster {
    /// `(x0, x1)` at the center of a cell.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.domain.center(col, self.resolution),
            self.domain.center(row, self.resolution),
        )
    }

    pub fn class_at(&self, row: usize, col: usize) -> usize {
        self.cells[row * self.resolution + col]
    }

    /// CSV with header `p0,p1,class`, one row per cell in row-major order.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.cells.len() * 48 + 16);
        out.push_str("p0,p1,class\n");
        for row in 0..self.resolution {
            for col in 0..self.resolution {
                let (x0, x1) = self.cell_center(row, col);
                out.push_str(&fmt_f64(x0));
                out.push(',');
                out.push_str(&fmt_f64(x1));
                out.push(',');
                out.push_str(&self.class_at(row, col).to_string());
                out.push('\n');
            }
        }
        out
    }
}

enum CellRule<'a> {
    Icl,
    Cc(&'a Prior),
    Shift(&'a [f64]),
    Pc(PcPredictor),
}

impl CellRule<'_> {
    fn classify(&self, scores: [f64; 2]) -> Result<usize, BoundaryError> {
        Ok(match self {
            CellRule::Icl => argmax_class(&scores),
            CellRule::Cc(prior) => {
                calibrate_cc(&ScoreRecord::new("", scores.to_vec(), None), prior)?.predicted_class
            }
            CellRule::Shift(prior) => {
                argmax_class(&[scores[0] - prior[0], scores[1] - prior[1]])
            }
            CellRule::Pc(predictor) => {
                predictor.predict(&ScoreRecord::new("", scores.to_vec(), None))?.predicted_class
            }
        })
    }
}

/// Classifies every cell center with the rule's own prediction function.
pub fn raster_boundary(
    rule: BoundaryRule<'_>,
    resolution: usize,
    domain: RasterDomain,
) -> Result<BoundaryRaster, BoundaryError> {
    if resolution < 2 {
        return Err(BoundaryError::Resolution(resolution));
    }
    if let RasterDomain::LogScore { min, max } = domain {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(BoundaryError::Domain(format!("log range [{min}, {max}]")));
        }
    }
    let (cell_rule, analytic) = match rule {
        BoundaryRule::Icl => (
            CellRule::Icl,
            Some(derive_linear_boundary(Method::Icl, &Prior::zero(2, crate::Provenance::BatchMean))?),
        ),
        BoundaryRule::Cc(prior) => (CellRule::Cc(prior), Some(derive_linear_boundary(Method::Cc, prior)?)),
        BoundaryRule::Dc(prior) => {
            if prior.provenance == crate::Provenance::ContentFree {
                return Err(CalibrationError::Provenance {
                    method: Method::Dc,
                    found: prior.provenance.as_str(),
                }
                .into());
            }
            (CellRule::Shift(&prior.values), Some(derive_linear_boundary(Method::Dc, prior)?))
        }
        BoundaryRule::Bc(prior) => (CellRule::Shift(&prior.values), Some(derive_linear_boundary(Method::Bc, prior)?)),
        BoundaryRule::Pc(model) => {
            if !model.final_log_likelihood.is_finite() {
                return Err(BoundaryError::Unfitted);
            }
            if model.num_components() != 2 {
                return Err(BoundaryError::NotBinary(model.num_components()));
            }
            (CellRule::Pc(PcPredictor::new(model)?), None)
        }
    };
    let to_scores = |x0: f64, x1: f64| match domain {
        RasterDomain::Probability => [x0.ln(), x1.ln()],
        RasterDomain::LogScore { .. } => [x0, x1],
    };
    let cells = (0..resolution * resolution)
        .into_par_iter()
        .map(|i| {
            let (row, col) = (i / resolution, i % resolution);
            let x0 = domain.center(col, resolution);
            let x1 = domain.center(row, resolution);
            cell_rule.classify(to_scores(x0, x1))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BoundaryRaster {
        method: rule.method(),
        resolution,
        domain,
        cells,
        analytic,
    })
}
