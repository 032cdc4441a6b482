//! Monte Carlo simulation of noisy gradient descent on the quadratic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::recurrence::{moment_recurrence, StepRule};
use crate::error::{Error, Result};
use crate::model::{appx_error, LrSchedule, NqsParams, RunConfig};
use crate::seeding::derive_seed;

/// Learning-rate feedback when simulating with an initial weight norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Feedback {
    /// Every trial uses `γ_k = s / E‖w^{(k−1)}‖²` from the exact moments.
    #[default]
    Expected,
    /// Each trial uses its own `‖w^{(k−1)}‖²`.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub theta: NqsParams,
    pub run: RunConfig,
    /// Expected squared weight norm at initialization; enables norm feedback.
    pub s: Option<f64>,
    pub schedule: Option<LrSchedule>,
    pub feedback: Feedback,
    pub trials: usize,
    pub seed: u64,
    /// Total simulated modes `M ≥ N`; `None` means `4N`.
    pub latent_modes: Option<u64>,
}

impl SimConfig {
    pub fn new(theta: NqsParams, run: RunConfig, trials: usize, seed: u64) -> Self {
        SimConfig {
            theta,
            run,
            s: None,
            schedule: None,
            feedback: Feedback::Expected,
            trials,
            seed,
            latent_modes: None,
        }
    }

    pub fn latent_modes(&self) -> u64 {
        self.latent_modes.unwrap_or(4 * self.run.n_params)
    }

    pub fn validate(&self) -> Result<()> {
        self.theta.validate()?;
        self.run.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidArgument(
                "simulation needs at least one trial".into(),
            ));
        }
        if self.latent_modes() < self.run.n_params {
            return Err(Error::InvalidArgument(
                "latent_modes must be at least n_params".into(),
            ));
        }
        if let Some(s) = self.s {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "initial norm must be positive, got {s}"
                )));
            }
        }
        if let Some(sched) = &self.schedule {
            if sched.total_steps() != self.run.steps {
                return Err(Error::InvalidArgument(
                    "schedule length differs from run steps".into(),
                ));
            }
            if self.s.is_some() {
                return Err(Error::InvalidArgument(
                    "norm feedback and an explicit schedule are exclusive".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub mean_loss: f64,
    pub stderr_loss: f64,
    /// `s + Σ (w_n − w_n⁽⁰⁾)²`, with `s = 0` when no initial norm is set.
    pub mean_weight_norm_sq: f64,
    pub stderr_weight_norm_sq: f64,
    /// Trials that finished with finite values.
    pub trials: usize,
    pub failures: usize,
}

/// Mean and standard error with compensated sums, in input order.
pub(crate) fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    fn kahan(it: impl Iterator<Item = f64>) -> f64 {
        let (mut sum, mut c) = (0.0, 0.0);
        for x in it {
            let y = x - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        sum
    }
    let n = xs.len() as f64;
    let mean = kahan(xs.iter().copied()) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = kahan(xs.iter().map(|x| (x - mean) * (x - mean))) / (n - 1.0);
    (mean, (var / n).sqrt())
}

const BLOWUP: f64 = 1e150;

/// One trial's displacements `w − w*` on all simulated modes.
struct TrialPath {
    curvature: Vec<f64>,
    start: Vec<f64>,
    end: Vec<f64>,
}

/// `Σ_{n≤N} (d_n − d_n⁽⁰⁾)²`.
fn growth(end: &[f64], start: &[f64]) -> f64 {
    end.iter()
        .zip(start)
        .map(|(x, x0)| (x - x0) * (x - x0))
        .sum()
}

fn evolve(cfg: &SimConfig, index: usize, gammas: Option<&[f64]>) -> Option<TrialPath> {
    let t = &cfg.theta;
    let n_trained = cfg.run.n_params as usize;
    let n_latent = cfg.latent_modes() as usize;
    let batch = cfg.run.batch as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64));
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut curvature = Vec::with_capacity(n_latent);
    let mut d = Vec::with_capacity(n_latent);
    for n in 1..=n_latent {
        let nf = n as f64;
        let lam = t.hessian_scale * nf.powf(-t.hessian_exp);
        curvature.push(lam);
        let sd = (2.0 * t.approx_scale * nf.powf(-t.approx_exp) / lam).sqrt();
        d.push(sd * normal());
    }
    let start = d.clone();
    let noise_sd: Vec<f64> = (1..=n_trained)
        .map(|n| (2.0 * t.noise_scale * (n as f64).powf(-t.noise_exp) / batch).sqrt())
        .collect();

    for k in 0..cfg.run.steps as usize {
        let gamma = match (gammas, cfg.s) {
            (Some(g), _) => g[k],
            (None, Some(s)) => s / (s + growth(&d[..n_trained], &start[..n_trained])),
            (None, None) => 1.0,
        };
        for i in 0..n_trained {
            d[i] = (1.0 - gamma * curvature[i]) * d[i] + gamma * noise_sd[i] * normal();
        }
        if d[..n_trained]
            .iter()
            .any(|x| !x.is_finite() || x.abs() > BLOWUP)
        {
            return None;
        }
    }
    Some(TrialPath {
        curvature,
        start,
        end: d,
    })
}

/// Per-step learning rates, or `None` when each trial derives its own.
fn step_sizes(cfg: &SimConfig) -> Result<Option<Vec<f64>>> {
    Ok(match (cfg.s, &cfg.schedule, cfg.feedback) {
        (Some(s), _, Feedback::Expected) => Some(
            moment_recurrence(
                &cfg.theta,
                &cfg.run,
                &StepRule::WeightNorm { s, gamma_init: 1.0 },
            )?
            .gammas,
        ),
        (Some(_), _, Feedback::Empirical) => None,
        (None, Some(sched), _) => Some(
            sched
                .segments
                .iter()
                .flat_map(|&(m, g)| std::iter::repeat_n(g, m as usize))
                .collect(),
        ),
        (None, None, _) => Some(vec![1.0; cfg.run.steps as usize]),
    })
}

/// Monte Carlo estimate of the expected loss and squared weight norm.
///
/// Dispatches on the configuration: with `s` set the learning rate follows
/// the weight norm as selected by `feedback`; otherwise `schedule` (or a
/// unit rate) is used.
pub fn simulate_run(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let gammas = step_sizes(cfg)?;
    let tail = appx_error(&cfg.theta, cfg.latent_modes())?;
    let n_trained = cfg.run.n_params as usize;
    let outcomes: Vec<Option<(f64, f64)>> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            evolve(cfg, i, gammas.as_deref()).map(|p| {
                let mut quad = 0.0;
                for (lam, x) in p.curvature.iter().zip(&p.end) {
                    quad += 0.5 * lam * x * x;
                }
                let loss = cfg.theta.irreducible + tail + quad;
                (loss, growth(&p.end[..n_trained], &p.start[..n_trained]))
            })
        })
        .collect();
    let ok: Vec<(f64, f64)> = outcomes.into_iter().flatten().collect();
    let failures = cfg.trials - ok.len();
    if ok.is_empty() {
        return Err(Error::FitFailure(format!(
            "all {} simulated trials diverged",
            cfg.trials
        )));
    }
    let losses: Vec<f64> = ok.iter().map(|t| t.0).collect();
    let norms: Vec<f64> = ok.iter().map(|t| cfg.s.unwrap_or(0.0) + t.1).collect();
    let (mean_loss, stderr_loss) = mean_stderr(&losses);
    let (mean_norm, stderr_norm) = mean_stderr(&norms);
    Ok(SimResult {
        mean_loss,
        stderr_loss,
        mean_weight_norm_sq: mean_norm,
        stderr_weight_norm_sq: stderr_norm,
        trials: ok.len(),
        failures,
    })
}

/// [`simulate_run`] with weight-norm feedback; `cfg.s` must be set.
pub fn simulate_layernorm_run(cfg: &SimConfig) -> Result<SimResult> {
    if cfg.s.is_none() {
        return Err(Error::InvalidArgument(
            "weight-norm simulation needs an initial norm s".into(),
        ));
    }
    simulate_run(cfg)
}

/// Initial and final displacements of one trial on every simulated mode,
/// including the untrained ones beyond `N`.
pub fn simulate_trial_state(cfg: &SimConfig, index: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let gammas = step_sizes(cfg)?;
    let path = evolve(cfg, index, gammas.as_deref())
        .ok_or_else(|| Error::FitFailure(format!("trial {index} diverged")))?;
    Ok((path.start, path.end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::nqs_loss;
    use crate::numerics::zeta_tail;

    fn theta() -> NqsParams {
        NqsParams::new(1.6, 3.0, 0.7, 0.5, 1.4, 0.4, 1.2).unwrap()
    }

    #[test]
    fn single_mode_single_step_matches_hand_formula() {
        let t = theta();
        let run = RunConfig::new(1, 2, 1, 1).unwrap();
        let mut cfg = SimConfig::new(t, run, 40_000, 11);
        cfg.latent_modes = Some(1);
        let sim = simulate_run(&cfg).unwrap();
        // d1 = (1 − Q) d0 + sqrt(2R/B) ξ with E d0² = 2P/Q.
        let q = t.hessian_scale;
        let expected_d2 = (1.0 - q).powi(2) * 2.0 * t.approx_scale / q + 2.0 * t.noise_scale / 2.0;
        let by_hand = t.irreducible
            + t.approx_scale * zeta_tail(t.approx_exp, 1).unwrap()
            + 0.5 * q * expected_d2;
        assert!((by_hand - nqs_loss(&t, &run).unwrap()).abs() < 1e-12);
        assert!(
            (sim.mean_loss - by_hand).abs() < 4.0 * sim.stderr_loss,
            "{sim:?} vs {by_hand}"
        );
        // E(d1 − d0)² = Q² E d0² + noise.
        let growth = q * q * 2.0 * t.approx_scale / q + t.noise_scale;
        assert!((sim.mean_weight_norm_sq - growth).abs() < 4.0 * sim.stderr_weight_norm_sq);
        assert_eq!(sim.failures, 0);
    }

    #[test]
    fn reruns_are_identical() {
        let cfg = SimConfig::new(theta(), RunConfig::new(6, 3, 20, 1).unwrap(), 300, 4);
        assert_eq!(simulate_run(&cfg).unwrap(), simulate_run(&cfg).unwrap());
        let other = SimConfig {
            seed: 5,
            ..cfg.clone()
        };
        assert_ne!(
            simulate_run(&cfg).unwrap().mean_loss,
            simulate_run(&other).unwrap().mean_loss
        );
    }

    #[test]
    fn untrained_modes_keep_their_start() {
        let cfg = SimConfig::new(theta(), RunConfig::new(5, 1, 30, 1).unwrap(), 1, 2);
        let (start, end) = simulate_trial_state(&cfg, 0).unwrap();
        assert_eq!(start.len(), 20);
        assert_eq!(start[5..], end[5..]);
        assert!(start[..5].iter().zip(&end[..5]).all(|(a, b)| a != b));
    }

    #[test]
    fn huge_norm_feedback_reduces_to_unit_rate() {
        let run = RunConfig::new(4, 2, 25, 1).unwrap();
        let plain = SimConfig::new(theta(), run, 1, 8);
        for feedback in [Feedback::Expected, Feedback::Empirical] {
            let ln = SimConfig {
                s: Some(1e14),
                feedback,
                ..plain.clone()
            };
            let (_, a) = simulate_trial_state(&plain, 0).unwrap();
            let (_, b) = simulate_trial_state(&ln, 0).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn constant_schedule_equals_default_rate() {
        let run = RunConfig::new(4, 2, 12, 1).unwrap();
        let plain = SimConfig::new(theta(), run, 50, 3);
        let sched = SimConfig {
            schedule: Some(LrSchedule::constant(12, 1.0).unwrap()),
            ..plain.clone()
        };
        assert_eq!(simulate_run(&plain).unwrap(), simulate_run(&sched).unwrap());
    }

    #[test]
    fn rejects_inconsistent_settings() {
        let run = RunConfig::new(4, 2, 12, 1).unwrap();
        let base = SimConfig::new(theta(), run, 10, 0);
        let both = SimConfig {
            s: Some(1.0),
            schedule: Some(LrSchedule::constant(12, 1.0).unwrap()),
            ..base.clone()
        };
        assert!(matches!(
            simulate_run(&both),
            Err(Error::InvalidArgument(_))
        ));
        let short = SimConfig {
            schedule: Some(LrSchedule::constant(11, 1.0).unwrap()),
            ..base.clone()
        };
        assert!(simulate_run(&short).is_err());
        let few = SimConfig {
            latent_modes: Some(3),
            ..base.clone()
        };
        assert!(simulate_run(&few).is_err());
        assert!(simulate_run(&SimConfig {
            trials: 0,
            ..base.clone()
        })
        .is_err());
        assert!(simulate_layernorm_run(&base).is_err());
    }

    #[test]
    fn compensated_mean_and_stderr() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        // Naive summation of ten 0.1s gives 0.9999999999999999.
        assert_eq!(mean_stderr(&[0.1; 10]).0, 0.1);
        assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
    }
}
