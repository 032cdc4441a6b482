//! Two-term power-law baseline `E + P/N^{p−1} + Q/D^{(p−1)/q}`.

use serde::{Deserialize, Serialize};

use crate::data::ScalingDataset;
use crate::error::{Error, Result};
use crate::fitting::optim::{self, Problem, Term};
use crate::fitting::{latin_hypercube, FitConfig, InitOutcome};

pub const CHIN_PARAMS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChinParams {
    /// `p > 1`; the model-size exponent is `p − 1`.
    pub approx_exp: f64,
    pub model_scale: f64,
    /// `q > 0`; the data exponent is `(p − 1)/q`.
    pub data_exp: f64,
    pub data_scale: f64,
    pub irreducible: f64,
}

impl ChinParams {
    pub fn new(
        approx_exp: f64,
        model_scale: f64,
        data_exp: f64,
        data_scale: f64,
        irreducible: f64,
    ) -> Result<Self> {
        let phi = ChinParams {
            approx_exp,
            model_scale,
            data_exp,
            data_scale,
            irreducible,
        };
        phi.validate()?;
        Ok(phi)
    }

    /// Scales may be zero (a degenerate but well-defined model).
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.approx_exp,
            self.model_scale,
            self.data_exp,
            self.data_scale,
            self.irreducible,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite parameter in {self:?}")));
        }
        if !(self.approx_exp > 1.0) || !(self.data_exp > 0.0) {
            return Err(Error::Domain(format!(
                "need p > 1 and q > 0, got p = {}, q = {}",
                self.approx_exp, self.data_exp
            )));
        }
        if self.model_scale < 0.0 || self.data_scale < 0.0 || self.irreducible < 0.0 {
            return Err(Error::Domain(
                "scales and irreducible loss must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn model_exponent(&self) -> f64 {
        self.approx_exp - 1.0
    }

    pub fn data_exponent(&self) -> f64 {
        (self.approx_exp - 1.0) / self.data_exp
    }
}

pub fn chin_loss_real(phi: &ChinParams, n: f64, d: f64) -> f64 {
    phi.irreducible
        + phi.model_scale * n.powf(-phi.model_exponent())
        + phi.data_scale * d.powf(-phi.data_exponent())
}

/// Loss for a model of `n` parameters trained on `d` tokens.
pub fn chin_loss(phi: &ChinParams, n: u64, d: u64) -> Result<f64> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("N and D must be at least 1".into()));
    }
    Ok(chin_loss_real(phi, n as f64, d as f64))
}

/// Coordinates are `(ln(p−1), ln P, ln q, ln Q, E)`.
fn decode(u: &[f64; CHIN_PARAMS]) -> ChinParams {
    ChinParams {
        approx_exp: 1.0 + u[0].exp(),
        model_scale: u[1].exp(),
        data_exp: u[2].exp(),
        data_scale: u[3].exp(),
        irreducible: u[4],
    }
}

struct ChinProblem {
    /// `(ln N, ln D, ln l)` per record.
    points: Vec<(f64, f64, f64)>,
}

impl Problem<CHIN_PARAMS> for ChinProblem {
    fn evaluate(&self, u: &[f64; CHIN_PARAMS], terms: &mut Vec<Term<CHIN_PARAMS>>) {
        let a = u[0].exp();
        let q = u[2].exp();
        let b = a / q;
        if u[4] < 0.0 {
            let push = [0.0, 0.0, 0.0, 0.0, -1.0];
            terms.extend(self.points.iter().map(|_| Term::Penalty { push }));
            return;
        }
        for &(ln_n, ln_d, ln_l) in &self.points {
            let tn = (u[1] - a * ln_n).exp();
            let td = (u[3] - b * ln_d).exp();
            let pred = u[4] + tn + td;
            if !pred.is_finite() || pred <= 0.0 {
                terms.push(Term::Penalty {
                    push: [0.0, 1.0, 0.0, 1.0, 0.0],
                });
                continue;
            }
            let grad = [
                -a * (tn * ln_n + td * ln_d / q) / pred,
                tn / pred,
                td * b * ln_d / pred,
                td / pred,
                1.0 / pred,
            ];
            terms.push(Term::Residual {
                value: pred.ln() - ln_l,
                grad,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChinFit {
    pub params: ChinParams,
    pub objective: f64,
    pub per_init: Vec<InitOutcome>,
}

/// Multi-start fit of the baseline to `data`, with `D = B·K·seq_len`.
///
/// Uses the Adam settings of `config`, its baseline initialization box and
/// polishes every start with damped Gauss-Newton.
pub fn chin_fit(data: &ScalingDataset, config: &FitConfig) -> Result<ChinFit> {
    config.validate()?;
    data.validate()?;
    if data.len() < CHIN_PARAMS {
        return Err(Error::Underdetermined {
            records: data.len(),
            params: CHIN_PARAMS,
        });
    }
    let problem = ChinProblem {
        points: data
            .records
            .iter()
            .map(|r| {
                (
                    (r.run.n_params as f64).ln(),
                    r.run.tokens().ln(),
                    r.loss.ln(),
                )
            })
            .collect(),
    };
    let starts: Vec<[f64; CHIN_PARAMS]> =
        latin_hypercube(&config.chin_ranges.as_array(), config.n_inits, config.seed)?
            .into_iter()
            .map(|x| [(x[0] - 1.0).ln(), x[2], x[1].ln(), x[3], x[4]])
            .collect();
    let polish = FitConfig {
        polish_iters: config.polish_iters.max(100),
        ..config.clone()
    };
    let outcomes = crate::fitting::run_starts(&problem, &starts, &polish);
    let best = optim::argmin(&outcomes).ok_or_else(|| {
        Error::FitFailure("every initialization produced a non-finite objective".into())
    })?;
    let params = decode(&outcomes[best].u);
    params.validate()?;
    Ok(ChinFit {
        params,
        objective: outcomes[best].value,
        per_init: outcomes
            .iter()
            .enumerate()
            .map(|(index, o)| InitOutcome {
                index,
                objective: o.value,
            })
            .collect(),
    })
}

/// Which side of the compute split a degenerate model prefers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// No model-size term: all compute goes to data.
    AllData,
    /// No data term: all compute goes to model size.
    AllModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChinOptimum {
    pub n_params: f64,
    pub tokens: f64,
    pub sequences: f64,
    pub loss: f64,
    pub boundary: Option<Boundary>,
}

const GOLDEN_TOL: f64 = 1e-6;

/// Loss-minimizing `(N, D)` with `6·N·D = compute`, `N, D ≥ 1`.
pub fn chin_optimal_nd(phi: &ChinParams, compute: f64, seq_len: u64) -> Result<ChinOptimum> {
    phi.validate()?;
    if !(compute > 0.0) || !compute.is_finite() || seq_len == 0 {
        return Err(Error::InvalidArgument(
            "compute and seq_len must be positive".into(),
        ));
    }
    let budget = compute / 6.0;
    if budget < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "compute {compute} cannot fund N = D = 1"
        )));
    }
    let hi = budget.ln();
    let at = |x: f64, boundary| {
        let n = x.exp();
        let d = budget / n;
        ChinOptimum {
            n_params: n,
            tokens: d,
            sequences: d / seq_len as f64,
            loss: chin_loss_real(phi, n, d),
            boundary,
        }
    };
    match (phi.model_scale == 0.0, phi.data_scale == 0.0) {
        (true, _) => return Ok(at(0.0, Some(Boundary::AllData))),
        (false, true) => return Ok(at(hi, Some(Boundary::AllModel))),
        _ => {}
    }
    let f = |x: f64| at(x, None).loss;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    Ok(at(0.5 * (a + b), None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        let c = ChinParams::new(1.5, 0.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(chin_loss(&c, 123, 456).unwrap(), 1.0);
        let c = ChinParams::new(2.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert!((chin_loss(&c, 10, 7).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn symmetric_split() {
        let c = ChinParams::new(1.4, 3.0, 1.0, 3.0, 0.5).unwrap();
        let opt = chin_optimal_nd(&c, 6e12, 1).unwrap();
        assert!((opt.n_params / 1e6 - 1.0).abs() < 1e-5);
        assert!((6.0 * opt.n_params * opt.tokens / 6e12 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_models_flag_a_boundary() {
        let c = ChinParams::new(1.4, 0.0, 1.0, 3.0, 0.5).unwrap();
        assert_eq!(
            chin_optimal_nd(&c, 6e6, 1).unwrap().boundary,
            Some(Boundary::AllData)
        );
        let c = ChinParams::new(1.4, 2.0, 1.0, 0.0, 0.5).unwrap();
        let opt = chin_optimal_nd(&c, 6e6, 1).unwrap();
        assert_eq!(opt.boundary, Some(Boundary::AllModel));
        assert!((opt.n_params - 1e6).abs() < 1e-3);
    }

    #[test]
    fn fit_rejects_too_few_records() {
        use crate::data::Record;
        use crate::model::RunConfig;
        let d = ScalingDataset::new(
            (0..4)
                .map(|i| Record::new(i, RunConfig::new(10, 1, 1 + i as u64, 1).unwrap(), 2.0))
                .collect(),
        )
        .unwrap();
        assert_eq!(
            chin_fit(&d, &FitConfig::default()),
            Err(Error::Underdetermined {
                records: 4,
                params: 5
            })
        );
    }
}
