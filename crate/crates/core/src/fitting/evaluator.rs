//! Loss and parameter gradient for every record of a dataset at once.
//!
//! Mode nodes are shared between records (the exact head is the same for
//! every run), so the spectra are computed once per node and only the
//! step-count dependent factors are evaluated per record.

use std::collections::HashMap;

use crate::data::ScalingDataset;
use crate::error::{Error, Result};
use crate::model::{NqsParams, N_PARAMS};
use crate::numerics::{ln_abs_one_minus, zeta_tail_generic, Dual, SumRule};

const SERIES_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone)]
struct RecordPlan {
    steps: u64,
    batch: f64,
    /// Index into the distinct model sizes.
    size: usize,
    /// `(node, weight)` pairs.
    terms: Vec<(u32, f64)>,
}

#[derive(Debug, Clone)]
pub(crate) struct DatasetEvaluator {
    ln_nodes: Vec<f64>,
    sizes: Vec<u64>,
    records: Vec<RecordPlan>,
}

#[derive(Debug, Clone, Copy)]
struct NodeValues {
    ln_n: f64,
    excess: f64,
    step: f64,
    noise: f64,
    ln_contraction: f64,
}

impl DatasetEvaluator {
    pub fn new(data: &ScalingDataset) -> Result<Self> {
        let rule = SumRule::default();
        let mut index: HashMap<u64, u32> = HashMap::new();
        let mut ln_nodes = Vec::new();
        let mut size_index: HashMap<u64, usize> = HashMap::new();
        let mut sizes = Vec::new();
        let mut records = Vec::with_capacity(data.len());
        for r in &data.records {
            r.run.validate()?;
            let size = *size_index.entry(r.run.n_params).or_insert_with(|| {
                sizes.push(r.run.n_params);
                sizes.len() - 1
            });
            if r.run.steps == 0 {
                return Err(Error::Data(format!(
                    "record {}: steps must be positive",
                    r.id
                )));
            }
            let quad = rule.quadrature(r.run.n_params);
            let terms = quad
                .nodes
                .iter()
                .zip(&quad.weights)
                .map(|(mode, &w)| {
                    let id = *index.entry(mode.ln_n.to_bits()).or_insert_with(|| {
                        ln_nodes.push(mode.ln_n);
                        (ln_nodes.len() - 1) as u32
                    });
                    (id, w)
                })
                .collect();
            records.push(RecordPlan {
                steps: r.run.steps,
                batch: r.run.batch as f64,
                size,
                terms,
            });
        }
        Ok(DatasetEvaluator {
            ln_nodes,
            sizes,
            records,
        })
    }

    /// Predicted loss and `∂L/∂θ` per record, in dataset order.
    pub fn evaluate(&self, theta: &NqsParams, out: &mut Vec<Result<(f64, [f64; N_PARAMS])>>) {
        out.clear();
        if theta.hessian_scale >= 2.0 {
            out.extend(
                self.records
                    .iter()
                    .map(|_| Err(Error::Unstable { mode: 1 })),
            );
            return;
        }
        let t = theta;
        let nodes: Vec<NodeValues> = self
            .ln_nodes
            .iter()
            .map(|&ln_n| {
                let step = t.hessian_scale * (-t.hessian_exp * ln_n).exp();
                NodeValues {
                    ln_n,
                    excess: t.approx_scale * (-t.approx_exp * ln_n).exp(),
                    step,
                    noise: step * t.noise_scale * (-t.noise_exp * ln_n).exp(),
                    ln_contraction: ln_abs_one_minus(step),
                }
            })
            .collect();
        let tails: Vec<Result<Dual<1>>> = self
            .sizes
            .iter()
            .map(|&n| zeta_tail_generic(Dual::<1>::variable(t.approx_exp, 0), n))
            .collect();

        for plan in &self.records {
            let tail = match &tails[plan.size] {
                Ok(z) => *z,
                Err(e) => {
                    out.push(Err(e.clone()));
                    continue;
                }
            };
            out.push(record_terms(t, plan, &nodes, tail));
        }
    }
}

fn record_terms(
    t: &NqsParams,
    plan: &RecordPlan,
    nodes: &[NodeValues],
    tail: Dual<1>,
) -> Result<(f64, [f64; N_PARAMS])> {
    let k = plan.steps as f64;
    // Bias: Σ w A c, Σ w A c ln n, Σ w A c' a, Σ w A c' a ln n.
    let (mut sb, mut sbl, mut tb, mut tbl) = (0.0, 0.0, 0.0, 0.0);
    // Variance at batch 1, same pattern with G in place of c.
    let (mut sv, mut svl, mut tv, mut tvl) = (0.0, 0.0, 0.0, 0.0);
    for &(id, w) in &plan.terms {
        let nd = &nodes[id as usize];
        let a = nd.step;
        let (c, dc, g, dg) = if a == 1.0 {
            (0.0, 0.0, 1.0, 0.0)
        } else {
            let om = 1.0 - a;
            let ln_rho2 = 2.0 * nd.ln_contraction;
            let expo = k * ln_rho2;
            let c = expo.exp();
            let dc = -2.0 * k * c / om;
            let (g, dg) = if expo.abs() < SERIES_THRESHOLD {
                let c1 = k * (k - 1.0) / 2.0;
                let c2 = k * (k - 1.0) * (2.0 * k - 1.0) / 12.0;
                let g = ln_rho2 * c1 + ln_rho2 * ln_rho2 * c2 + k;
                let dg_dl = c1 + 2.0 * ln_rho2 * c2;
                (g, dg_dl * (-2.0 / om))
            } else {
                let d = a * (2.0 - a);
                let g = -expo.exp_m1() / d;
                let x = om * om;
                let dg_dx = (g - k * c / x) / d;
                (g, dg_dx * (-2.0 * om))
            };
            (c, dc, g, dg)
        };
        let bias = w * nd.excess;
        let var = w * nd.noise;
        sb += bias * c;
        sbl += bias * c * nd.ln_n;
        tb += bias * dc * a;
        tbl += bias * dc * a * nd.ln_n;
        sv += var * g;
        svl += var * g * nd.ln_n;
        tv += var * dg * a;
        tvl += var * dg * a * nd.ln_n;
    }
    let inv_b = 1.0 / plan.batch;
    let appx = t.approx_scale * tail.value;
    let loss = t.irreducible + appx + sb + sv * inv_b;
    let grad = [
        t.approx_scale * tail.partials[0] - sbl,
        (appx + sb) / t.approx_scale,
        -tbl - (svl + tvl) * inv_b,
        (tb + (sv + tv) * inv_b) / t.hessian_scale,
        -svl * inv_b,
        sv * inv_b / t.noise_scale,
        1.0,
    ];
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { node: f64::NAN });
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;
    use crate::model::{nqs_gradient, nqs_loss, RunConfig};

    #[test]
    fn matches_the_dual_evaluator() {
        let runs = [
            (1u64, 1u64, 1u64),
            (8, 4, 64),
            (90, 2, 3),
            (5000, 64, 1000),
            (1_000_000, 256, 20_000),
            (3_000_000_000, 1024, 7),
        ];
        let data = ScalingDataset::new(
            runs.iter()
                .enumerate()
                .map(|(i, &(n, b, k))| Record::new(i, RunConfig::new(n, b, k, 64).unwrap(), 1.0))
                .collect(),
        )
        .unwrap();
        let ev = DatasetEvaluator::new(&data).unwrap();
        for theta in [
            NqsParams::new(1.12, 3.6, 0.59, 0.93, 1.5, 4.3, 0.45).unwrap(),
            NqsParams::new(2.3, 40.0, 1.9, 1.7, 0.7, 50.0, 1.2).unwrap(),
            NqsParams::new(1.06, 12.0, 0.61, 0.06, 2.4, 0.02, 1.0).unwrap(),
        ] {
            let mut out = Vec::new();
            ev.evaluate(&theta, &mut out);
            for (r, got) in data.records.iter().zip(out) {
                let (l, g) = got.unwrap();
                let l0 = nqs_loss(&theta, &r.run).unwrap();
                let g0 = nqs_gradient(&theta, &r.run).unwrap();
                assert!((l - l0).abs() <= 1e-13 * l0, "{:?}: {l} vs {l0}", r.run);
                for i in 0..N_PARAMS {
                    let scale = g0[i].abs().max(1e-12 * l0);
                    assert!(
                        (g[i] - g0[i]).abs() <= 1e-8 * scale,
                        "{:?} [{i}]: {} vs {}",
                        r.run,
                        g[i],
                        g0[i]
                    );
                }
            }
        }
    }

    #[test]
    fn unstable_curvature_is_reported_per_record() {
        let data = ScalingDataset::new(vec![Record::new(
            0,
            RunConfig::new(10, 1, 5, 1).unwrap(),
            1.0,
        )])
        .unwrap();
        let ev = DatasetEvaluator::new(&data).unwrap();
        let mut out = Vec::new();
        ev.evaluate(
            &NqsParams::new(1.5, 1.0, 1.0, 2.5, 1.0, 1.0, 0.0).unwrap(),
            &mut out,
        );
        assert_eq!(out[0], Err(Error::Unstable { mode: 1 }));
    }
}
