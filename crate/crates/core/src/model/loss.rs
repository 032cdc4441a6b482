//! Closed-form expected loss after `K` constant-rate steps, and its gradient.

use super::params::{NqsParams, RunConfig, N_PARAMS};
use crate::error::{Error, Result};
use crate::numerics::{
    contraction_pow_sq, geometric_sum_sq_step, hurwitz_zeta, zeta_tail_generic, ModeQuadrature,
    Real, SumRule,
};

/// The additive decomposition of the expected loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms<S> {
    pub irreducible: S,
    pub appx: S,
    pub bias: S,
    /// Variance term at the run's batch size.
    pub var: S,
}

impl<S: Real> LossTerms<S> {
    pub fn total(&self) -> S {
        self.irreducible + self.appx + self.bias + self.var
    }
}

/// Fails when some trained mode does not contract under step size `gamma`.
///
/// `gamma·Q/n^q` is largest at `n = 1`, so that mode decides stability.
pub(crate) fn check_contraction(hessian_scale: f64, gamma: f64, steps: u64) -> Result<()> {
    if steps > 0 && gamma * hessian_scale >= 2.0 {
        return Err(Error::Unstable { mode: 1 });
    }
    Ok(())
}

/// `Σ_{n≤N} P/n^p` in closed form, the bias before any step is taken.
pub(crate) fn untrained_bias<S: Real>(theta: &NqsParams<S>, n: u64) -> Result<S> {
    let p = theta.approx_exp;
    Ok(theta.approx_scale * (hurwitz_zeta(p, 1.0)? - hurwitz_zeta(p, n as f64 + 1.0)?))
}

/// Loss evaluator for one `(N, K)` pair with its mode quadrature precomputed.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub run: RunConfig,
    pub quadrature: ModeQuadrature,
}

impl PreparedRun {
    pub fn new(run: RunConfig, rule: &SumRule) -> Result<Self> {
        run.validate()?;
        Ok(PreparedRun {
            run,
            quadrature: rule.quadrature(run.n_params),
        })
    }

    /// Bias sum and the batch-1 variance sum over the trained modes.
    pub fn mode_sums<S: Real>(&self, theta: &NqsParams<S>) -> Result<(S, S)> {
        let k = self.run.steps;
        if k == 0 && self.run.n_params > SumRule::default().exact_below {
            return Ok((untrained_bias(theta, self.run.n_params)?, S::zero()));
        }
        check_contraction(theta.hessian_scale.value(), 1.0, k)?;
        let qr = theta.hessian_scale * theta.noise_scale;
        let mut bias = S::zero();
        let mut var = S::zero();
        for (mode, &w) in self.quadrature.nodes.iter().zip(&self.quadrature.weights) {
            let neg_ln = -mode.ln_n;
            let n_mp = (theta.approx_exp * neg_ln).exp();
            let b = if k == 0 {
                theta.approx_scale * n_mp
            } else {
                let n_mq = (theta.hessian_exp * neg_ln).exp();
                let a = theta.hessian_scale * n_mq;
                let n_mr = (theta.noise_exp * neg_ln).exp();
                let v = qr * n_mq * n_mr * geometric_sum_sq_step(a, k);
                if !v.is_finite() {
                    return Err(Error::NonFinite { node: mode.n });
                }
                var = var + v * w;
                theta.approx_scale * n_mp * contraction_pow_sq(a, k)
            };
            if !b.is_finite() {
                return Err(Error::NonFinite { node: mode.n });
            }
            bias = bias + b * w;
        }
        Ok((bias, var))
    }

    pub fn terms<S: Real>(&self, theta: &NqsParams<S>) -> Result<LossTerms<S>> {
        let appx = theta.approx_scale * zeta_tail_generic(theta.approx_exp, self.run.n_params)?;
        let (bias, var_unit) = self.mode_sums(theta)?;
        Ok(LossTerms {
            irreducible: theta.irreducible,
            appx,
            bias,
            var: var_unit / self.run.batch as f64,
        })
    }

    pub fn loss<S: Real>(&self, theta: &NqsParams<S>) -> Result<S> {
        Ok(self.terms(theta)?.total())
    }

    pub fn loss_and_gradient(&self, theta: &NqsParams) -> Result<(f64, [f64; N_PARAMS])> {
        let out = self.loss(&theta.seeded())?;
        Ok((out.value, out.partials))
    }
}

fn prepared(n: u64, batch: u64, k: u64) -> Result<PreparedRun> {
    if n == 0 {
        return Err(Error::InvalidArgument("mode sums need N >= 1".into()));
    }
    PreparedRun::new(
        RunConfig {
            n_params: n,
            batch,
            steps: k,
            seq_len: 1,
        },
        &SumRule::default(),
    )
}

/// Approximation error `Σ_{n>N} P/n^p`.
pub fn appx_error(theta: &NqsParams, n: u64) -> Result<f64> {
    Ok(theta.approx_scale * zeta_tail_generic(theta.approx_exp, n)?)
}

/// Optimization bias `Σ_{n≤N} P/n^p (1 − Q/n^q)^{2K}`.
pub fn bias_error(theta: &NqsParams, n: u64, k: u64) -> Result<f64> {
    Ok(prepared(n, 1, k)?.mode_sums(theta)?.0)
}

/// Mini-batch variance `(QR/B) Σ_{n≤N} n^{-(q+r)} Σ_{j<K} (1 − Q/n^q)^{2j}`.
pub fn var_error(theta: &NqsParams, n: u64, batch: u64, k: u64) -> Result<f64> {
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    Ok(prepared(n, batch, k)?.mode_sums(theta)?.1 / batch as f64)
}

/// Expected loss `E_irr + E_app + E_bias + E_var`.
pub fn nqs_loss(theta: &NqsParams, run: &RunConfig) -> Result<f64> {
    PreparedRun::new(*run, &SumRule::default())?.loss(theta)
}

pub fn nqs_terms(theta: &NqsParams, run: &RunConfig) -> Result<LossTerms<f64>> {
    PreparedRun::new(*run, &SumRule::default())?.terms(theta)
}

/// Gradient of [`nqs_loss`] in the order `(p, P, q, Q, r, R, E_irr)`.
pub fn nqs_gradient(theta: &NqsParams, run: &RunConfig) -> Result<[f64; N_PARAMS]> {
    Ok(PreparedRun::new(*run, &SumRule::default())?
        .loss_and_gradient(theta)?
        .1)
}

/// `E_bias(N, K) · K^{(p−1)/q}` for each `K`; bounded in `K` when `N` is large.
pub fn bias_bound_ratio(theta: &NqsParams, n: u64, ks: &[u64]) -> Result<Vec<f64>> {
    let exponent = (theta.approx_exp - 1.0) / theta.hessian_exp;
    ks.iter()
        .map(|&k| {
            if k == 0 {
                return Err(Error::InvalidArgument(
                    "bias bound ratio undefined at K = 0".into(),
                ));
            }
            Ok(bias_error(theta, n, k)? * (k as f64).powf(exponent))
        })
        .collect()
}
