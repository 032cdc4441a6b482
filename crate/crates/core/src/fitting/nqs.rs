use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::FitConfig;
use super::evaluator::DatasetEvaluator;
use super::lhs::latin_hypercube;
use super::objective::Scoring;
use super::optim::{self, AdamSettings, Outcome, Problem, Term};
use crate::data::ScalingDataset;
use crate::error::{Error, Result};
use crate::model::{nqs_loss, nqs_loss_layernorm, LayerNormConfig, NqsParams, RunConfig, N_PARAMS};
use crate::seeding::derive_seed;

/// Coordinates are `(ln(p−1), ln P, ln q, ln Q, ln r, ln R, E_irr)`.
pub(crate) fn encode(theta: &NqsParams) -> [f64; N_PARAMS] {
    [
        (theta.approx_exp - 1.0).ln(),
        theta.approx_scale.ln(),
        theta.hessian_exp.ln(),
        theta.hessian_scale.ln(),
        theta.noise_exp.ln(),
        theta.noise_scale.ln(),
        theta.irreducible,
    ]
}

pub(crate) fn decode(u: &[f64; N_PARAMS]) -> NqsParams {
    NqsParams {
        approx_exp: 1.0 + u[0].exp(),
        approx_scale: u[1].exp(),
        hessian_exp: u[2].exp(),
        hessian_scale: u[3].exp(),
        noise_exp: u[4].exp(),
        noise_scale: u[5].exp(),
        irreducible: u[6],
    }
}

pub(crate) struct NqsProblem {
    evaluator: DatasetEvaluator,
    log_losses: Vec<f64>,
}

impl NqsProblem {
    pub fn new(data: &ScalingDataset) -> Result<Self> {
        data.validate()?;
        Ok(NqsProblem {
            evaluator: DatasetEvaluator::new(data)?,
            log_losses: data.records.iter().map(|r| r.loss.ln()).collect(),
        })
    }
}

impl Problem<N_PARAMS> for NqsProblem {
    fn evaluate(&self, u: &[f64; N_PARAMS], terms: &mut Vec<Term<N_PARAMS>>) {
        let theta = decode(u);
        if theta.validate().is_err() {
            // A log coordinate drifted far enough that its parameter rounds
            // to a boundary (p = 1, a scale of 0 or ∞); steer it back.
            let decoded = theta.to_array();
            let mut push = [0.0; N_PARAMS];
            for i in 0..6 {
                let floor = if i == 0 { 1.0 } else { 0.0 };
                if !(decoded[i] > floor && decoded[i].is_finite()) {
                    push[i] = u[i].signum();
                }
            }
            terms.extend(self.log_losses.iter().map(|_| Term::Penalty { push }));
            return;
        }
        let jac = [
            theta.approx_exp - 1.0,
            theta.approx_scale,
            theta.hessian_exp,
            theta.hessian_scale,
            theta.noise_exp,
            theta.noise_scale,
            1.0,
        ];
        let mut out = Vec::with_capacity(self.log_losses.len());
        self.evaluator.evaluate(&theta, &mut out);
        for (res, &target) in out.into_iter().zip(&self.log_losses) {
            terms.push(match res {
                Ok((pred, g)) if pred > 0.0 => {
                    let mut grad = [0.0; N_PARAMS];
                    for i in 0..N_PARAMS {
                        grad[i] = g[i] * jac[i] / pred;
                    }
                    Term::Residual {
                        value: pred.ln() - target,
                        grad,
                    }
                }
                Ok(_) => {
                    let mut push = [0.0; N_PARAMS];
                    push[6] = -1.0;
                    Term::Penalty { push }
                }
                Err(Error::Unstable { .. }) => {
                    let mut push = [0.0; N_PARAMS];
                    push[3] = 1.0;
                    Term::Penalty { push }
                }
                Err(_) => Term::Penalty {
                    push: [0.0; N_PARAMS],
                },
            });
        }
    }
}

/// Drops runs whose half-batch, double-step neighbor is not clearly worse.
///
/// A record `(N, B, K, l)` is removed when a record `(N, B/2, 2K)` with the
/// same sequence length has loss above `l − margin`. Returns the kept records
/// and the ids of the removed ones.
pub fn filter_small_batch(data: &ScalingDataset, margin: f64) -> (ScalingDataset, Vec<usize>) {
    let mut worst: HashMap<(u64, u64, u64, u64), f64> = HashMap::new();
    for r in &data.records {
        let key = (r.run.n_params, r.run.batch, r.run.steps, r.run.seq_len);
        let e = worst.entry(key).or_insert(f64::NEG_INFINITY);
        *e = e.max(r.loss);
    }
    let dominated = |r: &crate::data::Record| {
        if r.run.batch % 2 != 0 {
            return false;
        }
        let key = (
            r.run.n_params,
            r.run.batch / 2,
            r.run.steps.saturating_mul(2),
            r.run.seq_len,
        );
        worst.get(&key).is_some_and(|&l| l > r.loss - margin)
    };
    let removed = data
        .records
        .iter()
        .filter(|r| dominated(r))
        .map(|r| r.id)
        .collect();
    (data.subset(|r| !dominated(r)), removed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitOutcome {
    pub index: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub best_theta: NqsParams,
    pub best_objective: f64,
    pub per_init: Vec<InitOutcome>,
    pub selected_s: Option<f64>,
    pub filter_removed: Vec<usize>,
    pub seed: u64,
    pub n_records: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Starting points: the warm start, if any, then the Latin hypercube.
fn starts(config: &FitConfig) -> Result<Vec<[f64; N_PARAMS]>> {
    let mut out = Vec::with_capacity(config.n_inits + 1);
    if let Some(w) = &config.warm_start {
        w.validate()?;
        out.push(encode(w));
    }
    for x in latin_hypercube(&config.init_ranges.as_array(), config.n_inits, config.seed)? {
        let theta = NqsParams::new(x[0], x[1], x[2], x[3], x[4], x[5] * x[5], x[6])?;
        out.push(encode(&theta));
    }
    Ok(out)
}

pub(crate) fn run_starts<const D: usize>(
    problem: &impl Problem<D>,
    starts: &[[f64; D]],
    config: &FitConfig,
) -> Vec<Outcome<D>> {
    let settings = AdamSettings {
        iters: config.n_iters,
        lr: config.lr,
        clip: config.clip,
    };
    let scoring = config.scoring();
    use rayon::prelude::*;
    starts
        .par_iter()
        .map(|&u0| {
            let best = optim::adam(problem, u0, &settings, &scoring, |_| {});
            if config.polish_iters > 0 && best.value.is_finite() {
                optim::polish(problem, best, &scoring, config.polish_iters)
            } else {
                best
            }
        })
        .collect()
}

/// Multi-start fit of the loss model to `data`.
pub fn fit_nqs(data: &ScalingDataset, config: &FitConfig) -> Result<FitReport> {
    config.validate()?;
    data.validate()?;
    let (kept, removed) = match config.filter_margin {
        Some(m) => filter_small_batch(data, m),
        None => (data.clone(), Vec::new()),
    };
    if kept.is_empty() {
        return Err(Error::InvalidArgument("no records left to fit".into()));
    }
    let mut warnings = Vec::new();
    if kept.len() < N_PARAMS {
        warnings.push(format!(
            "{} records for {N_PARAMS} parameters; the fit is underdetermined",
            kept.len()
        ));
    }
    let problem = NqsProblem::new(&kept)?;
    let starts = starts(config)?;
    let outcomes = run_starts(&problem, &starts, config);
    let per_init: Vec<InitOutcome> = outcomes
        .iter()
        .enumerate()
        .map(|(index, o)| InitOutcome {
            index,
            objective: o.value,
        })
        .collect();
    let best = optim::argmin(&outcomes).ok_or_else(|| {
        Error::FitFailure("every initialization produced a non-finite objective".into())
    })?;
    let mut terms = Vec::new();
    problem.evaluate(&outcomes[best].u, &mut terms);
    if terms.iter().any(|t| matches!(t, Term::Penalty { .. })) {
        return Err(Error::FitFailure(format!(
            "all {} initializations ended in the penalty region (best objective {})",
            outcomes.len(),
            outcomes[best].value
        )));
    }
    Ok(FitReport {
        best_theta: decode(&outcomes[best].u),
        best_objective: outcomes[best].value,
        per_init,
        selected_s: None,
        filter_removed: removed,
        seed: config.seed,
        n_records: kept.len(),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SSelection {
    pub s: f64,
    /// `(s, objective)` for every grid value, in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Grid search for the initial weight norm on small-batch runs, scoring
/// each candidate with the weight-norm adjusted loss.
pub fn select_s_with(
    theta: &NqsParams,
    data: &ScalingDataset,
    s_grid: &[f64],
    template: &LayerNormConfig,
    scoring: &Scoring,
) -> Result<SSelection> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "s selection needs small-batch data".into(),
        ));
    }
    if s_grid.is_empty() || s_grid.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument(
            "s grid must be nonempty and positive".into(),
        ));
    }
    let mut curve = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let ln = LayerNormConfig { s, ..*template };
        let mut total = 0.0;
        for r in &data.records {
            total += match nqs_loss_layernorm(theta, &ln, &r.run) {
                Ok(pred) if pred > 0.0 => scoring.score(pred.ln() - r.loss.ln()),
                Ok(_) | Err(Error::Unstable { .. }) | Err(Error::NonFinite { .. }) => {
                    scoring.penalty
                }
                Err(e) => return Err(e),
            };
        }
        curve.push((s, total / data.len() as f64));
    }
    let mut best = 0;
    for (i, &(s, v)) in curve.iter().enumerate() {
        let (bs, bv) = curve[best];
        if v < bv || (v == bv && s < bs) {
            best = i;
        }
    }
    Ok(SSelection {
        s: curve[best].0,
        curve,
    })
}

pub fn select_s(theta: &NqsParams, data: &ScalingDataset, s_grid: &[f64]) -> Result<SSelection> {
    select_s_with(
        theta,
        data,
        s_grid,
        &LayerNormConfig::new(1.0),
        &Scoring::default(),
    )
}

/// `anchor · 2^j` for `j ∈ [−half_width, half_width]`.
pub fn s_grid_around(anchor: f64, half_width: i32) -> Vec<f64> {
    (-half_width..=half_width)
        .map(|j| anchor * 2f64.powi(j))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// `(lo, hi)` per query.
    pub intervals: Vec<(f64, f64)>,
    /// Predictions per successful trial, `[trial][query]`.
    pub samples: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Linear-interpolated empirical quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Prediction intervals from refits on random subsamples of the records.
pub fn bootstrap_ci(
    data: &ScalingDataset,
    config: &FitConfig,
    queries: &[RunConfig],
    trials: usize,
    frac: f64,
    level: f64,
) -> Result<BootstrapResult> {
    if trials < 2 {
        return Err(Error::InvalidArgument(
            "bootstrap needs at least 2 trials".into(),
        ));
    }
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subsample fraction must be in (0, 1), got {frac}"
        )));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidArgument(format!(
            "level must be in [0, 1], got {level}"
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "bootstrap over an empty dataset".into(),
        ));
    }
    let m = data.len();
    let take = ((frac * m as f64).ceil() as usize).clamp(1, m);
    let mut warnings = Vec::new();
    let mut samples = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, t as u64));
        let mut idx = sample(&mut rng, m, take).into_vec();
        idx.sort_unstable();
        let sub = ScalingDataset {
            records: idx.iter().map(|&i| data.records[i].clone()).collect(),
            extra_columns: data.extra_columns.clone(),
        };
        if take < N_PARAMS {
            warnings.push(format!("trial {t}: subsample of {take} records"));
        }
        let cfg = FitConfig {
            seed: derive_seed(config.seed ^ 0xB007, t as u64),
            ..config.clone()
        };
        let fit = match fit_nqs(&sub, &cfg) {
            Ok(f) => f,
            Err(e) => {
                warnings.push(format!("trial {t}: {e}"));
                continue;
            }
        };
        let preds = queries
            .iter()
            .map(|q| nqs_loss(&fit.best_theta, q))
            .collect::<Result<Vec<f64>>>();
        match preds {
            Ok(p) => samples.push(p),
            Err(e) => warnings.push(format!("trial {t}: {e}")),
        }
    }
    if samples.len() < 2 {
        return Err(Error::FitFailure(format!(
            "only {} bootstrap trials succeeded",
            samples.len()
        )));
    }
    let lo_q = (1.0 - level) / 2.0;
    let intervals = (0..queries.len())
        .map(|j| {
            let mut col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            col.sort_by(f64::total_cmp);
            (quantile(&col, lo_q), quantile(&col, 1.0 - lo_q))
        })
        .collect();
    Ok(BootstrapResult {
        intervals,
        samples,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;

    fn rec(id: usize, b: u64, k: u64, loss: f64) -> Record {
        Record::new(id, RunConfig::new(1000, b, k, 16).unwrap(), loss)
    }

    #[test]
    fn filter_rule() {
        let d = ScalingDataset::new(vec![rec(0, 8, 100, 3.0), rec(1, 4, 200, 2.99)]).unwrap();
        let (kept, removed) = filter_small_batch(&d, 0.05);
        assert_eq!(removed, vec![0]);
        assert_eq!(kept.records[0].id, 1);

        let d = ScalingDataset::new(vec![rec(0, 8, 100, 3.0), rec(1, 4, 200, 2.9)]).unwrap();
        assert!(filter_small_batch(&d, 0.05).1.is_empty());

        let d = ScalingDataset::new(vec![rec(0, 8, 100, 3.0), rec(1, 4, 300, 3.5)]).unwrap();
        assert!(filter_small_batch(&d, 0.05).1.is_empty());
    }

    #[test]
    fn codec_round_trip() {
        let t = NqsParams::new(1.3, 20.0, 0.8, 0.4, 1.6, 2.0, 1.1).unwrap();
        let back = decode(&encode(&t));
        for (a, b) in t.to_array().iter().zip(back.to_array()) {
            assert!((a - b).abs() <= 1e-14 * a.abs());
        }
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.125), 1.5);
    }

    #[test]
    fn singleton_grid() {
        let t = NqsParams::new(1.5, 2.0, 1.0, 0.5, 1.0, 1.0, 0.5).unwrap();
        let d = ScalingDataset::new(vec![rec(0, 2, 10, 2.0)]).unwrap();
        assert_eq!(select_s(&t, &d, &[3.0]).unwrap().s, 3.0);
        assert!(select_s(&t, &ScalingDataset::default(), &[3.0]).is_err());
    }

    fn small_problem() -> NqsProblem {
        let truth = NqsParams::new(1.6, 30.0, 0.7, 0.5, 1.4, 4.0, 1.2).unwrap();
        let records = [
            (1u64 << 10, 4u64, 64u64),
            (1 << 12, 8, 256),
            (1 << 14, 16, 1024),
            (1 << 8, 2, 4096),
            (1 << 16, 32, 16),
        ]
        .iter()
        .enumerate()
        .map(|(i, &(n, b, k))| {
            let run = RunConfig::new(n, b, k, 1).unwrap();
            Record::new(i, run, nqs_loss(&truth, &run).unwrap())
        })
        .collect();
        NqsProblem::new(&ScalingDataset::new(records).unwrap()).unwrap()
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(16))]
        #[test]
        fn every_adam_iterate_is_a_valid_parameter_point(seed in 0u64..1_000_000, lr in 1e-3f64..0.5) {
            let problem = small_problem();
            let config = FitConfig { n_inits: 2, seed, ..FitConfig::default() };
            let settings = AdamSettings { iters: 150, lr, clip: 1.0 };
            for u0 in starts(&config).unwrap() {
                optim::adam(&problem, u0, &settings, &config.scoring(), |u| {
                    assert!(decode(u).validate().is_ok(), "iterate {u:?}");
                });
            }
        }
    }

    #[test]
    fn boundary_coordinates_are_pushed_back() {
        let problem = small_problem();
        let mut u0 = encode(&NqsParams::new(1.6, 30.0, 0.7, 0.5, 1.4, 4.0, 1.2).unwrap());
        u0[0] = -40.0;
        u0[5] = -800.0;
        assert!(decode(&u0).validate().is_err());
        let settings = AdamSettings {
            iters: 200,
            lr: 0.5,
            clip: 1.0,
        };
        let mut last = u0;
        optim::adam(&problem, u0, &settings, &Scoring::default(), |u| last = *u);
        assert!(decode(&last).validate().is_ok(), "{last:?}");
    }
}
