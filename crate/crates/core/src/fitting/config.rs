use serde::{Deserialize, Serialize};

use super::objective::{ObjectiveKind, Scoring, DEFAULT_HUBER_DELTA, DEFAULT_PENALTY};
use crate::error::{Error, Result};
use crate::model::NqsParams;

/// Initialization box for the loss-model parameters, in natural units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitRanges {
    pub approx_exp: (f64, f64),
    pub approx_scale: (f64, f64),
    pub hessian_exp: (f64, f64),
    pub hessian_scale: (f64, f64),
    pub noise_exp: (f64, f64),
    /// Range of `√R`; samples are squared.
    pub noise_scale_sqrt: (f64, f64),
    pub irreducible: (f64, f64),
}

impl Default for InitRanges {
    fn default() -> Self {
        InitRanges {
            approx_exp: (1.05, 2.5),
            approx_scale: (10.0, 100.0),
            hessian_exp: (0.6, 2.5),
            hessian_scale: (0.05, 20.0),
            noise_exp: (0.6, 2.5),
            noise_scale_sqrt: (0.1, 10.0),
            irreducible: (1.0, 1.5),
        }
    }
}

impl InitRanges {
    /// Bounds in the order of [`NqsParams::to_array`].
    pub fn as_array(&self) -> [(f64, f64); 7] {
        [
            self.approx_exp,
            self.approx_scale,
            self.hessian_exp,
            self.hessian_scale,
            self.noise_exp,
            self.noise_scale_sqrt,
            self.irreducible,
        ]
    }
}

/// Initialization box for the two-term baseline, with scales in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChinInitRanges {
    pub approx_exp: (f64, f64),
    pub data_exp: (f64, f64),
    pub ln_model_scale: (f64, f64),
    pub ln_data_scale: (f64, f64),
    pub irreducible: (f64, f64),
}

impl Default for ChinInitRanges {
    fn default() -> Self {
        ChinInitRanges {
            approx_exp: (1.05, 2.5),
            data_exp: (0.3, 2.5),
            ln_model_scale: (-1.0, 5.0),
            ln_data_scale: (-1.0, 5.0),
            irreducible: (0.0, 3.0),
        }
    }
}

impl ChinInitRanges {
    pub fn as_array(&self) -> [(f64, f64); 5] {
        [
            self.approx_exp,
            self.data_exp,
            self.ln_model_scale,
            self.ln_data_scale,
            self.irreducible,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub n_inits: usize,
    pub n_iters: usize,
    pub lr: f64,
    pub clip: f64,
    pub huber_delta: f64,
    pub objective: ObjectiveKind,
    pub seed: u64,
    pub init_ranges: InitRanges,
    pub chin_ranges: ChinInitRanges,
    pub penalty: f64,
    /// Levenberg-Marquardt iterations applied to each start after Adam; 0 disables.
    pub polish_iters: usize,
    /// Margin of the small-batch filter; `None` disables filtering.
    pub filter_margin: Option<f64>,
    /// Extra start placed before the Latin hypercube samples.
    pub warm_start: Option<NqsParams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_inits: 1000,
            n_iters: 5000,
            lr: 1e-2,
            clip: 1.0,
            huber_delta: DEFAULT_HUBER_DELTA,
            objective: ObjectiveKind::Huber,
            seed: 0,
            init_ranges: InitRanges::default(),
            chin_ranges: ChinInitRanges::default(),
            penalty: DEFAULT_PENALTY,
            polish_iters: 200,
            filter_margin: Some(0.05),
            warm_start: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_inits == 0 || self.n_iters == 0 {
            return Err(Error::InvalidArgument(
                "need at least one init and one iteration".into(),
            ));
        }
        if !(self.clip > 0.0) || !(self.huber_delta > 0.0) || !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(
                "clip, huber_delta and lr must be positive".into(),
            ));
        }
        if !(self.penalty > 0.0) || !self.penalty.is_finite() {
            return Err(Error::InvalidArgument(
                "penalty must be positive and finite".into(),
            ));
        }
        let boxes = self
            .init_ranges
            .as_array()
            .into_iter()
            .chain(self.chin_ranges.as_array());
        for (lo, hi) in boxes {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "bad initialization range [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn scoring(&self) -> Scoring {
        Scoring {
            kind: self.objective,
            delta: self.huber_delta,
            penalty: self.penalty,
        }
    }
}
