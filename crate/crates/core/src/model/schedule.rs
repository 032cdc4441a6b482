//! Loss and weight norm under piecewise-constant learning rates, and the
//! weight-norm driven schedule.

use super::loss::{check_contraction, untrained_bias};
use super::params::{LayerNormConfig, LrSchedule, NqsParams, RunConfig};
use crate::error::{Error, Result};
use crate::numerics::{
    contraction_pow, contraction_pow_sq, geometric_sum_sq_step, zeta_tail, ModeQuadrature, SumRule,
};

/// `1 − (1 − a)^m` without cancellation for small `a`.
fn one_minus_contraction_pow(a: f64, m: u64) -> f64 {
    if a < 1.0 {
        -(m as f64 * (-a).ln_1p()).exp_m1()
    } else {
        1.0 - contraction_pow(a, m)
    }
}

/// Second-moment state of one trained mode.
#[derive(Debug, Clone, Copy)]
struct ModeState {
    /// Curvature `Q/n^q`.
    curvature: f64,
    /// `Π (1 − γ_k λ)`.
    factor: f64,
    /// `1 − factor`, tracked separately to keep precision near 0.
    moved: f64,
    /// `Π (1 − γ_k λ)²`.
    factor_sq: f64,
    /// `Σ_k γ_k² Π_{j>k} (1 − γ_j λ)²`.
    noise: f64,
}

impl ModeState {
    fn new(curvature: f64) -> Self {
        ModeState {
            curvature,
            factor: 1.0,
            moved: 0.0,
            factor_sq: 1.0,
            noise: 0.0,
        }
    }

    fn advance(&mut self, steps: u64, gamma: f64) {
        let a = gamma * self.curvature;
        let decay = contraction_pow_sq(a, steps);
        self.noise = self.noise * decay + gamma * gamma * geometric_sum_sq_step(a, steps);
        self.factor_sq *= decay;
        if steps == 1 {
            self.moved += self.factor * a;
            self.factor *= 1.0 - a;
        } else {
            self.moved += self.factor * one_minus_contraction_pow(a, steps);
            self.factor *= contraction_pow(a, steps);
        }
    }
}

/// Per-mode recurrences on a quadrature grid.
struct ModeGrid<'a> {
    theta: &'a NqsParams,
    run: &'a RunConfig,
    quadrature: ModeQuadrature,
    /// `P/n^p` per node.
    excess: Vec<f64>,
    /// `n^{-q}` per node.
    hessian_spectrum: Vec<f64>,
    /// `n^{-r}` per node.
    noise_spectrum: Vec<f64>,
    states: Vec<ModeState>,
}

impl<'a> ModeGrid<'a> {
    fn new(theta: &'a NqsParams, run: &'a RunConfig, rule: &SumRule) -> Self {
        let quadrature = rule.quadrature(run.n_params);
        let mut excess = Vec::with_capacity(quadrature.len());
        let mut hessian_spectrum = Vec::with_capacity(quadrature.len());
        let mut noise_spectrum = Vec::with_capacity(quadrature.len());
        let mut states = Vec::with_capacity(quadrature.len());
        for mode in &quadrature.nodes {
            let neg_ln = -mode.ln_n;
            excess.push(theta.approx_scale * (theta.approx_exp * neg_ln).exp());
            noise_spectrum.push((theta.noise_exp * neg_ln).exp());
            let n_mq = (theta.hessian_exp * neg_ln).exp();
            hessian_spectrum.push(n_mq);
            states.push(ModeState::new(theta.hessian_scale * n_mq));
        }
        ModeGrid {
            theta,
            run,
            quadrature,
            excess,
            hessian_spectrum,
            noise_spectrum,
            states,
        }
    }

    fn advance(&mut self, steps: u64, gamma: f64) -> Result<()> {
        check_contraction(self.theta.hessian_scale, gamma, steps)?;
        for st in &mut self.states {
            st.advance(steps, gamma);
        }
        Ok(())
    }

    fn weighted_sum(&self, f: impl Fn(usize) -> f64) -> Result<f64> {
        let mut total = 0.0;
        for (i, (mode, &w)) in self
            .quadrature
            .nodes
            .iter()
            .zip(&self.quadrature.weights)
            .enumerate()
        {
            let v = f(i);
            if !v.is_finite() {
                return Err(Error::NonFinite { node: mode.n });
            }
            total += v * w;
        }
        Ok(total)
    }

    /// Bias and variance sums, matching the order of operations of the
    /// constant-rate evaluator.
    fn loss(&self) -> Result<f64> {
        let t = self.theta;
        let qr = t.hessian_scale * t.noise_scale;
        let bias = if self.run.steps == 0 && self.run.n_params > SumRule::default().exact_below {
            untrained_bias(t, self.run.n_params)?
        } else {
            self.weighted_sum(|i| self.excess[i] * self.states[i].factor_sq)?
        };
        let var = self.weighted_sum(|i| {
            let st = &self.states[i];
            qr * self.hessian_spectrum[i] * self.noise_spectrum[i] * st.noise
        })?;
        let appx = t.approx_scale * zeta_tail(t.approx_exp, self.run.n_params)?;
        Ok(t.irreducible + appx + bias + var / self.run.batch as f64)
    }

    /// `E‖w‖² − s`.
    fn norm_growth(&self) -> Result<f64> {
        let t = self.theta;
        let batch = self.run.batch as f64;
        self.weighted_sum(|i| {
            let st = &self.states[i];
            let init_sq = 2.0 * self.excess[i] / st.curvature;
            init_sq * st.moved * st.moved
                + 2.0 * t.noise_scale * self.noise_spectrum[i] * st.noise / batch
        })
    }
}

fn check_schedule(schedule: &LrSchedule, run: &RunConfig) -> Result<()> {
    run.validate()?;
    if schedule.total_steps() != run.steps {
        return Err(Error::InvalidArgument(format!(
            "schedule covers {} steps, run has {}",
            schedule.total_steps(),
            run.steps
        )));
    }
    Ok(())
}

/// Expected loss after running `schedule`.
pub fn nqs_loss_scheduled(
    theta: &NqsParams,
    schedule: &LrSchedule,
    run: &RunConfig,
) -> Result<f64> {
    check_schedule(schedule, run)?;
    let mut grid = ModeGrid::new(theta, run, &SumRule::default());
    for &(steps, gamma) in &schedule.segments {
        grid.advance(steps, gamma)?;
    }
    grid.loss()
}

/// Expected squared weight norm after `run.steps` unit-rate steps, starting
/// from expected squared norm `ln.s`.
pub fn expected_weight_norm_sq(
    theta: &NqsParams,
    ln: &LayerNormConfig,
    run: &RunConfig,
) -> Result<f64> {
    ln.validate()?;
    run.validate()?;
    let mut grid = ModeGrid::new(theta, run, &SumRule::default());
    if run.steps > 0 {
        grid.advance(run.steps, 1.0)?;
    }
    Ok(ln.s + grid.norm_growth()?)
}

/// Segment end points `b_1 < … < b_n = K`, spaced roughly as `K^{i/n}`.
pub fn log_spaced_segments(steps: u64, n_segments: u64) -> Vec<u64> {
    let n = n_segments.min(steps);
    let mut ends = Vec::with_capacity(n as usize);
    let mut prev = 0u64;
    for i in 1..=n {
        let target = (steps as f64).powf(i as f64 / n as f64).round() as u64;
        let b = target.max(prev + 1).min(steps - (n - i));
        ends.push(b);
        prev = b;
    }
    ends
}

/// One refresh of the weight-norm driven learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSegment {
    pub start: u64,
    pub steps: u64,
    pub gamma: f64,
    /// Expected squared weight norm at `start`.
    pub norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleTrace {
    pub segments: Vec<ScheduleSegment>,
    pub final_norm_sq: f64,
    pub loss: f64,
}

impl ScheduleTrace {
    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.segments.iter().map(|s| (s.steps, s.gamma)).collect())
    }
}

fn layernorm_rule(ln: &LayerNormConfig) -> SumRule {
    SumRule {
        panels: ln.mode_grid_size.div_ceil(SumRule::default().points),
        ..SumRule::default()
    }
}

/// Builds the schedule `γ = γ_init · s / E‖w‖²`, refreshed at
/// log-spaced boundaries, together with the resulting loss.
pub fn layernorm_schedule(
    theta: &NqsParams,
    ln: &LayerNormConfig,
    run: &RunConfig,
) -> Result<ScheduleTrace> {
    ln.validate()?;
    run.validate()?;
    let mut grid = ModeGrid::new(theta, run, &layernorm_rule(ln));
    let mut segments = Vec::new();
    let mut start = 0;
    let mut norm_sq = ln.s;
    for end in log_spaced_segments(run.steps, ln.n_segments) {
        let gamma = ln.gamma_init * ln.s / norm_sq;
        grid.advance(end - start, gamma)?;
        segments.push(ScheduleSegment {
            start,
            steps: end - start,
            gamma,
            norm_sq,
        });
        norm_sq = ln.s + grid.norm_growth()?;
        start = end;
    }
    Ok(ScheduleTrace {
        segments,
        final_norm_sq: norm_sq,
        loss: grid.loss()?,
    })
}

/// Expected loss with the learning rate scaled by the inverse expected
/// weight norm.
pub fn nqs_loss_layernorm(theta: &NqsParams, ln: &LayerNormConfig, run: &RunConfig) -> Result<f64> {
    Ok(layernorm_schedule(theta, ln, run)?.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::nqs_loss;

    fn theta() -> NqsParams {
        NqsParams::new(1.4, 2.0, 0.8, 0.9, 1.2, 3.0, 0.5).unwrap()
    }

    #[test]
    fn single_unit_segment_matches_constant_rate_exactly() {
        for &(n, k) in &[(8u64, 64u64), (5000, 300), (10_000_000, 10_000)] {
            let run = RunConfig::new(n, 16, k, 128).unwrap();
            let sched = LrSchedule::constant(k, 1.0).unwrap();
            assert_eq!(
                nqs_loss_scheduled(&theta(), &sched, &run).unwrap(),
                nqs_loss(&theta(), &run).unwrap()
            );
        }
    }

    #[test]
    fn schedule_length_must_match() {
        let run = RunConfig::new(8, 1, 10, 1).unwrap();
        let sched = LrSchedule::constant(9, 1.0).unwrap();
        assert!(matches!(
            nqs_loss_scheduled(&theta(), &sched, &run),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn weight_norm_limits() {
        let ln = LayerNormConfig::new(1.7);
        let run = RunConfig::new(50, 4, 0, 1).unwrap();
        assert_eq!(expected_weight_norm_sq(&theta(), &ln, &run).unwrap(), 1.7);

        let t = NqsParams {
            noise_scale: 0.0,
            ..NqsParams::new(2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0).unwrap()
        };
        let run = RunConfig::new(1, 1, 10_000, 1).unwrap();
        let w = expected_weight_norm_sq(&t, &ln, &run).unwrap();
        assert!((w - 3.7).abs() < 1e-6);
    }

    #[test]
    fn segments_cover_the_run() {
        for &(k, n) in &[
            (1u64, 64u64),
            (64, 64),
            (1000, 64),
            (1_000_000, 64),
            (100, 7),
            (5, 1),
        ] {
            let ends = log_spaced_segments(k, n);
            assert_eq!(ends.len() as u64, n.min(k));
            assert_eq!(*ends.last().unwrap(), k);
            assert!(ends.windows(2).all(|w| w[0] < w[1]));
        }
        assert_eq!(log_spaced_segments(6, 6), vec![1, 2, 3, 4, 5, 6]);
        assert!(log_spaced_segments(0, 64).is_empty());
    }

    #[test]
    fn huge_initial_norm_recovers_constant_rate() {
        let ln = LayerNormConfig::new(1e12);
        for &(n, k) in &[(8u64, 64u64), (100_000, 3000)] {
            let run = RunConfig::new(n, 8, k, 1).unwrap();
            let a = nqs_loss_layernorm(&theta(), &ln, &run).unwrap();
            let b = nqs_loss(&theta(), &run).unwrap();
            assert!((a - b).abs() <= 1e-6 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn small_norm_slows_training() {
        let run = RunConfig::new(1000, 1 << 30, 500, 1).unwrap();
        let plain = nqs_loss(&theta(), &run).unwrap();
        let ln = nqs_loss_layernorm(&theta(), &LayerNormConfig::new(0.5), &run).unwrap();
        assert!(ln > plain);
    }

    #[test]
    fn coarse_grid_rejected() {
        let mut ln = LayerNormConfig::new(1.0);
        ln.mode_grid_size = 8;
        let run = RunConfig::new(10, 1, 10, 1).unwrap();
        assert!(matches!(
            nqs_loss_layernorm(&theta(), &ln, &run),
            Err(Error::InvalidArgument(_))
        ));
    }
}
