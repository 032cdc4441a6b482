//! Multi-start Adam and a damped Gauss-Newton polish over log residuals.

use nalgebra::{DMatrix, DVector};

use super::objective::{ObjectiveKind, Scoring};

/// Contribution of one record at a point in the unconstrained space.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Term<const D: usize> {
    /// `log prediction − log observed` and its gradient.
    Residual { value: f64, grad: [f64; D] },
    /// Unusable prediction; `push` is the gradient handed to the optimizer
    /// so that it moves back toward usable territory.
    Penalty { push: [f64; D] },
}

pub(crate) trait Problem<const D: usize>: Sync {
    fn evaluate(&self, u: &[f64; D], terms: &mut Vec<Term<D>>);
}

pub(crate) fn objective<const D: usize>(terms: &[Term<D>], scoring: &Scoring) -> (f64, [f64; D]) {
    let mut value = 0.0;
    let mut grad = [0.0; D];
    for t in terms {
        match t {
            Term::Residual { value: r, grad: g } => {
                value += scoring.score(*r);
                let s = scoring.slope(*r);
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc += s * gi;
                }
            }
            Term::Penalty { push } => {
                value += scoring.penalty;
                for (acc, gi) in grad.iter_mut().zip(push) {
                    *acc += gi;
                }
            }
        }
    }
    let m = terms.len().max(1) as f64;
    (value / m, grad.map(|g| g / m))
}

pub(crate) fn value_at<const D: usize>(
    problem: &impl Problem<D>,
    u: &[f64; D],
    scoring: &Scoring,
) -> f64 {
    let mut terms = Vec::new();
    problem.evaluate(u, &mut terms);
    objective(&terms, scoring).0
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AdamSettings {
    pub iters: usize,
    pub lr: f64,
    pub clip: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Outcome<const D: usize> {
    pub u: [f64; D],
    pub value: f64,
}

/// Runs Adam from `u0` and returns the lowest-objective iterate visited.
pub(crate) fn adam<const D: usize>(
    problem: &impl Problem<D>,
    u0: [f64; D],
    settings: &AdamSettings,
    scoring: &Scoring,
    mut on_iterate: impl FnMut(&[f64; D]),
) -> Outcome<D> {
    let mut u = u0;
    let mut m = [0.0; D];
    let mut v = [0.0; D];
    let mut best = Outcome {
        u,
        value: f64::INFINITY,
    };
    let mut terms = Vec::new();
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for step in 0..=settings.iters {
        on_iterate(&u);
        terms.clear();
        problem.evaluate(&u, &mut terms);
        let (value, grad) = objective(&terms, scoring);
        if value < best.value {
            best = Outcome { u, value };
        }
        if step == settings.iters {
            break;
        }
        b1t *= BETA1;
        b2t *= BETA2;
        for i in 0..D {
            let g = if grad[i].is_finite() {
                grad[i].clamp(-settings.clip, settings.clip)
            } else {
                0.0
            };
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            let mh = m[i] / (1.0 - b1t);
            let vh = v[i] / (1.0 - b2t);
            u[i] -= settings.lr * mh / (vh.sqrt() + EPS);
        }
    }
    best
}

/// Lowest value, earliest index on ties.
pub(crate) fn argmin<const D: usize>(outcomes: &[Outcome<D>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if !o.value.is_finite() {
            continue;
        }
        match best {
            Some(b) if outcomes[b].value <= o.value => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Levenberg-Marquardt on the residuals, with Huber handled by iteratively
/// reweighted least squares. Only improving steps are taken.
pub(crate) fn polish<const D: usize>(
    problem: &impl Problem<D>,
    start: Outcome<D>,
    scoring: &Scoring,
    max_iters: usize,
) -> Outcome<D> {
    let mut cur = start;
    let mut terms = Vec::new();
    let mut damping = 1e-3;
    for _ in 0..max_iters {
        terms.clear();
        problem.evaluate(&cur.u, &mut terms);
        let mut jtj = DMatrix::<f64>::zeros(D, D);
        let mut jtr = DVector::<f64>::zeros(D);
        for t in &terms {
            let Term::Residual { value: r, grad } = t else {
                return cur;
            };
            let w = match scoring.kind {
                ObjectiveKind::Huber if r.abs() > scoring.delta => scoring.delta / r.abs(),
                _ => 1.0,
            };
            for i in 0..D {
                jtr[i] += w * grad[i] * r;
                for j in 0..D {
                    jtj[(i, j)] += w * grad[i] * grad[j];
                }
            }
        }
        let mut improved = false;
        while damping < 1e12 {
            let mut a = jtj.clone();
            for i in 0..D {
                a[(i, i)] += damping * (jtj[(i, i)] + 1e-12);
            }
            let Some(chol) = a.cholesky() else {
                damping *= 4.0;
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let mut u = cur.u;
            for i in 0..D {
                u[i] += step[i];
            }
            let value = value_at(problem, &u, scoring);
            if value < cur.value {
                let gain = (cur.value - value) / cur.value.max(f64::MIN_POSITIVE);
                cur = Outcome { u, value };
                damping = (damping / 3.0).max(1e-12);
                improved = gain > 1e-12;
                break;
            }
            damping *= 4.0;
        }
        if !improved {
            break;
        }
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Residuals `u0 + u1·x_i − y_i`.
    struct Line {
        xs: Vec<f64>,
        ys: Vec<f64>,
    }

    impl Problem<2> for Line {
        fn evaluate(&self, u: &[f64; 2], terms: &mut Vec<Term<2>>) {
            for (x, y) in self.xs.iter().zip(&self.ys) {
                terms.push(Term::Residual {
                    value: u[0] + u[1] * x - y,
                    grad: [1.0, *x],
                });
            }
        }
    }

    fn line() -> Line {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let ys = xs.iter().map(|x| 0.3 - 0.2 * x).collect();
        Line { xs, ys }
    }

    #[test]
    fn adam_finds_the_line() {
        let settings = AdamSettings {
            iters: 3000,
            lr: 1e-2,
            clip: 1.0,
        };
        let out = adam(&line(), [1.0, 1.0], &settings, &Scoring::default(), |_| {});
        assert!(out.value < 1e-9, "{}", out.value);
    }

    #[test]
    fn polish_converges_to_exact_fit() {
        let p = line();
        let start = Outcome {
            u: [0.0, 0.0],
            value: value_at(&p, &[0.0, 0.0], &Scoring::default()),
        };
        let out = polish(&p, start, &Scoring::default(), 100);
        assert!(out.value < 1e-25, "{}", out.value);
        assert!((out.u[0] - 0.3).abs() < 1e-10 && (out.u[1] + 0.2).abs() < 1e-10);
    }

    #[test]
    fn argmin_prefers_first_on_ties() {
        let o = |v| Outcome { u: [0.0], value: v };
        assert_eq!(argmin(&[o(2.0), o(1.0), o(1.0)]), Some(1));
        assert_eq!(argmin(&[o(f64::NAN)]), None);
    }
}
