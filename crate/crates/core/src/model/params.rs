use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Dual, Real};

/// Number of scaling parameters in the loss model.
pub const N_PARAMS: usize = 7;

/// Parameter indices in the canonical order `(p, P, q, Q, r, R, E_irr)`.
pub mod index {
    pub const APPROX_EXP: usize = 0;
    pub const APPROX_SCALE: usize = 1;
    pub const HESSIAN_EXP: usize = 2;
    pub const HESSIAN_SCALE: usize = 3;
    pub const NOISE_EXP: usize = 4;
    pub const NOISE_SCALE: usize = 5;
    pub const IRREDUCIBLE: usize = 6;
}

/// Scaling parameters of the noisy quadratic system.
///
/// Mode `n` starts with excess risk `approx_scale / n^approx_exp`, has
/// curvature `hessian_scale / n^hessian_exp` (the learning rate is folded
/// into the curvature scale) and receives gradient noise with variance
/// proportional to `noise_scale / n^noise_exp / B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NqsParams<T = f64> {
    /// `p > 1`.
    pub approx_exp: T,
    /// `P > 0`.
    pub approx_scale: T,
    /// `q > 0`.
    pub hessian_exp: T,
    /// `Q > 0`.
    pub hessian_scale: T,
    /// `r > 0`.
    pub noise_exp: T,
    /// `R > 0`.
    pub noise_scale: T,
    /// `E_irr`, any real.
    pub irreducible: T,
}

impl NqsParams<f64> {
    pub fn new(
        approx_exp: f64,
        approx_scale: f64,
        hessian_exp: f64,
        hessian_scale: f64,
        noise_exp: f64,
        noise_scale: f64,
        irreducible: f64,
    ) -> Result<Self> {
        let theta = NqsParams {
            approx_exp,
            approx_scale,
            hessian_exp,
            hessian_scale,
            noise_exp,
            noise_scale,
            irreducible,
        };
        theta.validate()?;
        Ok(theta)
    }

    pub fn from_array(a: [f64; N_PARAMS]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6])
    }

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.approx_exp,
            self.approx_scale,
            self.hessian_exp,
            self.hessian_scale,
            self.noise_exp,
            self.noise_scale,
            self.irreducible,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.to_array();
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite parameter in {a:?}")));
        }
        if !(self.approx_exp > 1.0) {
            return Err(Error::Domain(format!(
                "approximation exponent p must exceed 1, got {}",
                self.approx_exp
            )));
        }
        for (name, v) in [
            ("P", self.approx_scale),
            ("q", self.hessian_exp),
            ("Q", self.hessian_scale),
            ("r", self.noise_exp),
            ("R", self.noise_scale),
        ] {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Lift to duals seeded so that partial `i` is `∂/∂θ_i`.
    pub fn seeded(&self) -> NqsParams<Dual<N_PARAMS>> {
        let a = self.to_array();
        NqsParams {
            approx_exp: Dual::variable(a[0], 0),
            approx_scale: Dual::variable(a[1], 1),
            hessian_exp: Dual::variable(a[2], 2),
            hessian_scale: Dual::variable(a[3], 3),
            noise_exp: Dual::variable(a[4], 4),
            noise_scale: Dual::variable(a[5], 5),
            irreducible: Dual::variable(a[6], 6),
        }
    }
}

impl<T: Real> NqsParams<T> {
    pub fn values(&self) -> NqsParams<f64> {
        NqsParams {
            approx_exp: self.approx_exp.value(),
            approx_scale: self.approx_scale.value(),
            hessian_exp: self.hessian_exp.value(),
            hessian_scale: self.hessian_scale.value(),
            noise_exp: self.noise_exp.value(),
            noise_scale: self.noise_scale.value(),
            irreducible: self.irreducible.value(),
        }
    }
}

/// One training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunConfig {
    /// Model size `N` (number of trained modes).
    pub n_params: u64,
    pub batch: u64,
    pub steps: u64,
    pub seq_len: u64,
}

impl RunConfig {
    pub fn new(n_params: u64, batch: u64, steps: u64, seq_len: u64) -> Result<Self> {
        let run = RunConfig {
            n_params,
            batch,
            steps,
            seq_len,
        };
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_params == 0 || self.batch == 0 || self.seq_len == 0 {
            return Err(Error::InvalidArgument(format!(
                "run needs positive N, B and seq_len: {self:?}"
            )));
        }
        Ok(())
    }

    /// Training tokens `D = B·K·seq_len`.
    pub fn tokens(&self) -> f64 {
        self.batch as f64 * self.steps as f64 * self.seq_len as f64
    }

    /// Training compute `C = 6·N·B·K·seq_len`.
    pub fn compute(&self) -> f64 {
        6.0 * self.n_params as f64 * self.tokens()
    }
}

/// Piecewise-constant learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    /// `(step_count, gamma)` in training order.
    pub segments: Vec<(u64, f64)>,
}

impl LrSchedule {
    pub fn new(segments: Vec<(u64, f64)>) -> Result<Self> {
        for &(count, gamma) in &segments {
            if count == 0 {
                return Err(Error::InvalidArgument(
                    "schedule segment with zero steps".into(),
                ));
            }
            if !(gamma > 0.0) || !gamma.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "learning rate must be positive, got {gamma}"
                )));
            }
        }
        Ok(LrSchedule { segments })
    }

    pub fn constant(steps: u64, gamma: f64) -> Result<Self> {
        if steps == 0 {
            return Ok(LrSchedule {
                segments: Vec::new(),
            });
        }
        Self::new(vec![(steps, gamma)])
    }

    /// One segment per step; consecutive equal rates are merged.
    pub fn from_per_step(gammas: &[f64]) -> Result<Self> {
        let mut segments: Vec<(u64, f64)> = Vec::new();
        for &g in gammas {
            match segments.last_mut() {
                Some((count, last)) if *last == g => *count += 1,
                _ => segments.push((1, g)),
            }
        }
        Self::new(segments)
    }

    pub fn total_steps(&self) -> u64 {
        self.segments.iter().map(|s| s.0).sum()
    }

    pub fn max_gamma(&self) -> f64 {
        self.segments.iter().map(|s| s.1).fold(0.0, f64::max)
    }
}

/// Settings for the weight-norm driven effective learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerNormConfig {
    /// Expected squared weight norm at initialization.
    pub s: f64,
    pub gamma_init: f64,
    /// Number of learning-rate refreshes, placed log-uniformly over the run.
    pub n_segments: u64,
    /// Tail quadrature nodes for the per-mode recurrences.
    pub mode_grid_size: usize,
}

impl LayerNormConfig {
    pub const DEFAULT_SEGMENTS: u64 = 64;
    pub const DEFAULT_GRID: usize = 512;
    pub const MIN_GRID: usize = 16;

    pub fn new(s: f64) -> Self {
        LayerNormConfig {
            s,
            gamma_init: 1.0,
            n_segments: Self::DEFAULT_SEGMENTS,
            mode_grid_size: Self::DEFAULT_GRID,
        }
    }

    /// Initialization-norm anchor `N · 0.02²`.
    pub fn anchor_s(n_params: u64) -> f64 {
        n_params as f64 * 0.02 * 0.02
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0) || !self.s.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "initial norm s must be positive, got {}",
                self.s
            )));
        }
        if !(self.gamma_init > 0.0) {
            return Err(Error::InvalidArgument("gamma_init must be positive".into()));
        }
        if self.n_segments == 0 {
            return Err(Error::InvalidArgument(
                "need at least one learning-rate segment".into(),
            ));
        }
        if self.mode_grid_size < Self::MIN_GRID {
            return Err(Error::InvalidArgument(format!(
                "mode_grid_size must be at least {}, got {}",
                Self::MIN_GRID,
                self.mode_grid_size
            )));
        }
        Ok(())
    }
}
