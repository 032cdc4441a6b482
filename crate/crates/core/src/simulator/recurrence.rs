//! Exact per-step propagation of the per-mode second moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{appx_error, LrSchedule, NqsParams, RunConfig};

/// How the learning rate of each step is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StepRule {
    Schedule(LrSchedule),
    /// `γ_k = gamma_init · s / E‖w^{(k−1)}‖²`, refreshed every step.
    WeightNorm {
        s: f64,
        gamma_init: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTrace {
    pub loss: f64,
    pub weight_norm_sq: f64,
    /// `P/n^p · Π(1 − γλ)²` per trained mode.
    pub bias: Vec<f64>,
    /// Variance contribution per trained mode at the run's batch size.
    pub var: Vec<f64>,
    /// Learning rate used at each step.
    pub gammas: Vec<f64>,
}

/// Expected loss and squared weight norm from the exact second-moment
/// recurrence, one step and one mode at a time.
///
/// With `d = w − w*` on mode `n`: `E d² ← (1−γλ)² E d² + γ²σ²` and
/// `E d·d₀ ← (1−γλ) E d·d₀`, from which `E(d − d₀)² = E d² − 2 E d·d₀ + E d₀²`.
pub fn moment_recurrence(
    theta: &NqsParams,
    run: &RunConfig,
    rule: &StepRule,
) -> Result<MomentTrace> {
    theta.validate()?;
    run.validate()?;
    let n_modes = run.n_params as usize;
    let batch = run.batch as f64;
    let mut curvature = Vec::with_capacity(n_modes);
    let mut init_sq = Vec::with_capacity(n_modes);
    let mut noise_var = Vec::with_capacity(n_modes);
    for n in 1..=run.n_params {
        let nf = n as f64;
        let lam = theta.hessian_scale * nf.powf(-theta.hessian_exp);
        curvature.push(lam);
        init_sq.push(2.0 * theta.approx_scale * nf.powf(-theta.approx_exp) / lam);
        noise_var.push(2.0 * theta.noise_scale * nf.powf(-theta.noise_exp) / batch);
    }
    let mut bias_sq = init_sq.clone();
    let mut var_sq = vec![0.0; n_modes];
    let mut cross = init_sq.clone();

    let norm = |bias_sq: &[f64], var_sq: &[f64], cross: &[f64], s: f64| -> f64 {
        let mut total = s;
        for i in 0..n_modes {
            total += bias_sq[i] + var_sq[i] - 2.0 * cross[i] + init_sq[i];
        }
        total
    };

    let gammas_fixed: Option<Vec<f64>> = match rule {
        StepRule::Schedule(sched) => {
            if sched.total_steps() != run.steps {
                return Err(Error::InvalidArgument(format!(
                    "schedule covers {} steps, run has {}",
                    sched.total_steps(),
                    run.steps
                )));
            }
            Some(
                sched
                    .segments
                    .iter()
                    .flat_map(|&(m, g)| std::iter::repeat_n(g, m as usize))
                    .collect(),
            )
        }
        StepRule::WeightNorm { s, gamma_init } => {
            if !(*s > 0.0) || !(*gamma_init > 0.0) {
                return Err(Error::InvalidArgument(
                    "weight-norm rule needs positive s and gamma_init".into(),
                ));
            }
            None
        }
    };

    let mut gammas = Vec::with_capacity(run.steps as usize);
    for k in 0..run.steps as usize {
        let gamma = match (&gammas_fixed, rule) {
            (Some(g), _) => g[k],
            (None, StepRule::WeightNorm { s, gamma_init }) => {
                gamma_init * s / norm(&bias_sq, &var_sq, &cross, *s)
            }
            _ => unreachable!(),
        };
        if gamma * theta.hessian_scale >= 2.0 {
            return Err(Error::Unstable { mode: 1 });
        }
        for i in 0..n_modes {
            let f = 1.0 - gamma * curvature[i];
            bias_sq[i] *= f * f;
            var_sq[i] = f * f * var_sq[i] + gamma * gamma * noise_var[i];
            cross[i] *= f;
        }
        gammas.push(gamma);
    }

    let s = match rule {
        StepRule::WeightNorm { s, .. } => *s,
        StepRule::Schedule(_) => 0.0,
    };
    let bias: Vec<f64> = (0..n_modes)
        .map(|i| 0.5 * curvature[i] * bias_sq[i])
        .collect();
    let var: Vec<f64> = (0..n_modes)
        .map(|i| 0.5 * curvature[i] * var_sq[i])
        .collect();
    let loss = theta.irreducible
        + appx_error(theta, run.n_params)?
        + bias.iter().sum::<f64>()
        + var.iter().sum::<f64>();
    Ok(MomentTrace {
        loss,
        weight_norm_sq: norm(&bias_sq, &var_sq, &cross, s),
        bias,
        var,
        gammas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::nqs_loss;
    use crate::numerics::{contraction_pow_sq, geometric_sum_sq_step};

    #[test]
    fn constant_rate_matches_closed_form_per_mode() {
        let t = NqsParams::new(1.7, 2.0, 0.9, 0.8, 1.1, 3.0, 0.2).unwrap();
        let (k, b) = (40u64, 3u64);
        let run = RunConfig::new(6, b, k, 1).unwrap();
        let tr = moment_recurrence(
            &t,
            &run,
            &StepRule::Schedule(LrSchedule::constant(k, 1.0).unwrap()),
        )
        .unwrap();
        for n in 1..=6u64 {
            let nf = n as f64;
            let a = t.hessian_scale * nf.powf(-t.hessian_exp);
            let bias = t.approx_scale * nf.powf(-t.approx_exp) * contraction_pow_sq(a, k);
            let var = t.hessian_scale
                * t.noise_scale
                * nf.powf(-t.hessian_exp - t.noise_exp)
                * geometric_sum_sq_step(a, k)
                / b as f64;
            let i = n as usize - 1;
            assert!((tr.bias[i] - bias).abs() <= 1e-12 * bias, "bias {n}");
            assert!((tr.var[i] - var).abs() <= 1e-12 * var, "var {n}");
        }
        let l = nqs_loss(&t, &run).unwrap();
        assert!((tr.loss - l).abs() <= 1e-12 * l);
    }
}
