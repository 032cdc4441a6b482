//! Fixed Gauss–Legendre rules and the exact-head / Euler–Maclaurin mode sum.
//!
//! A sum over modes `Σ_{n=1}^{N} f(n)` is evaluated as
//!
//! ```text
//! Σ_{n=1}^{L} f(n) + ∫_L^N f(n) dn + ½ (f(N) − f(L)),   L = min(int(0.05 N), 100)
//! ```
//!
//! with the integral taken by composite Gauss–Legendre in `u = ln n`, panels
//! at most four e-folds wide. For `N ≤ 100` the sum is exact. The node set depends only on `N` and the rule, never on
//! the summand, so the same [`ModeQuadrature`] serves values, gradients and
//! per-mode recurrences.

use std::sync::OnceLock;

use super::dual::Real;
use crate::error::{Error, Result};

pub const DEFAULT_POINTS: usize = 20;

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on the Legendre polynomial roots.
    pub fn new(points: usize) -> Self {
        assert!(points >= 1, "Gauss-Legendre rule needs at least one point");
        let n = points;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p1, mut p2) = (1.0, 0.0);
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
                }
                dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let prev = z;
                z = prev - p1 / dp;
                if (z - prev).abs() <= 1e-16 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn default_rule() -> &'static GaussLegendre {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| GaussLegendre::new(DEFAULT_POINTS))
    }

    pub fn integrate<S: Real>(&self, mut f: impl FnMut(f64) -> S, a: f64, b: f64) -> Result<S> {
        if !(a <= b) {
            return Err(Error::InvalidArgument(format!(
                "integration bounds out of order: a = {a} > b = {b}"
            )));
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let mut acc = S::zero();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let t = mid + half * x;
            let y = f(t);
            if !y.is_finite() {
                return Err(Error::NonFinite { node: t });
            }
            acc = acc + y * (w * half);
        }
        Ok(acc)
    }
}

/// 20-point Gauss–Legendre estimate of `∫_a^b f`.
pub fn gauss_legendre_integrate<S: Real>(f: impl FnMut(f64) -> S, a: f64, b: f64) -> Result<S> {
    GaussLegendre::default_rule().integrate(f, a, b)
}

/// A mode index together with its logarithm, which every summand needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub n: f64,
    pub ln_n: f64,
}

impl Mode {
    pub fn integer(n: u64) -> Self {
        let n = n as f64;
        Mode { n, ln_n: n.ln() }
    }
}

/// Parameters of the exact-head / E-M tail summation.
#[derive(Debug, Clone, PartialEq)]
pub struct SumRule {
    /// Sums with `N` at or below this are evaluated term by term.
    pub exact_below: u64,
    pub head_fraction: f64,
    pub head_max: u64,
    pub points: usize,
    /// Minimum number of equal-width panels in `ln n` over `[L, N]`.
    pub panels: usize,
    /// Upper bound on a panel's width in `ln n`. A decaying factor such as
    /// `(1 − Q n^-q)^{2K}` switches on over a few e-folds wherever it sits,
    /// and one 20-point panel across `[ln L, ln N]` misses it for large `N`.
    pub max_panel_width: f64,
}

impl Default for SumRule {
    fn default() -> Self {
        SumRule {
            exact_below: 100,
            head_fraction: 0.05,
            head_max: 100,
            points: DEFAULT_POINTS,
            panels: 1,
            max_panel_width: 4.0,
        }
    }
}

impl SumRule {
    /// `L = min(int(head_fraction·N), head_max)`.
    pub fn head_cutoff_rule(&self, n: u64) -> u64 {
        ((self.head_fraction * n as f64) as u64).min(self.head_max)
    }

    /// Number of leading terms summed exactly.
    pub fn head_cutoff(&self, n: u64) -> u64 {
        if n <= self.exact_below {
            n
        } else {
            self.head_cutoff_rule(n).max(1)
        }
    }

    fn panels_between(&self, lo: f64, hi: f64) -> usize {
        let by_width = if self.max_panel_width > 0.0 {
            ((hi - lo) / self.max_panel_width).ceil() as usize
        } else {
            1
        };
        self.panels.max(by_width).max(1)
    }

    pub fn quadrature(&self, n: u64) -> ModeQuadrature {
        let head = self.head_cutoff(n);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        if head == n {
            for m in 1..=n {
                nodes.push(Mode::integer(m));
                weights.push(1.0);
            }
            return ModeQuadrature { nodes, weights };
        }
        for m in 1..head {
            nodes.push(Mode::integer(m));
            weights.push(1.0);
        }
        // f(L) appears once in the head and once with -1/2 in the correction.
        nodes.push(Mode::integer(head));
        weights.push(0.5);

        let owned;
        let rule = if self.points == DEFAULT_POINTS {
            GaussLegendre::default_rule()
        } else {
            owned = GaussLegendre::new(self.points);
            &owned
        };
        let lo = (head as f64).ln();
        let hi = (n as f64).ln();
        let panels = self.panels_between(lo, hi);
        let width = (hi - lo) / panels as f64;
        for k in 0..panels {
            let a = lo + width * k as f64;
            let b = if k + 1 == panels { hi } else { a + width };
            let half = 0.5 * (b - a);
            let mid = 0.5 * (b + a);
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let u = mid + half * x;
                let m = u.exp();
                nodes.push(Mode { n: m, ln_n: u });
                weights.push(w * half * m);
            }
        }
        nodes.push(Mode::integer(n));
        weights.push(0.5);
        ModeQuadrature { nodes, weights }
    }
}

/// Weighted node set approximating `Σ_{n=1}^{N} f(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeQuadrature {
    pub nodes: Vec<Mode>,
    pub weights: Vec<f64>,
}

impl ModeQuadrature {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn sum<S: Real>(&self, mut f: impl FnMut(Mode) -> S) -> Result<S> {
        let mut acc = S::zero();
        for (mode, w) in self.nodes.iter().zip(&self.weights) {
            let y = f(*mode);
            if !y.is_finite() {
                return Err(Error::NonFinite { node: mode.n });
            }
            acc = acc + y * *w;
        }
        Ok(acc)
    }

    /// Like [`ModeQuadrature::sum`] but the summand may itself fail.
    pub fn try_sum<S: Real>(&self, mut f: impl FnMut(Mode) -> Result<S>) -> Result<S> {
        let mut acc = S::zero();
        for (mode, w) in self.nodes.iter().zip(&self.weights) {
            let y = f(*mode)?;
            if !y.is_finite() {
                return Err(Error::NonFinite { node: mode.n });
            }
            acc = acc + y * *w;
        }
        Ok(acc)
    }
}

/// `Σ_{n=1}^{N} f(n)` with an exact head and an E-M corrected quadrature tail.
pub fn hybrid_power_sum<S: Real>(rule: &SumRule, n: u64, f: impl FnMut(Mode) -> S) -> Result<S> {
    if n == 0 {
        return Err(Error::InvalidArgument("mode sum needs N >= 1".into()));
    }
    rule.quadrature(n).sum(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Dual;

    #[test]
    fn legendre_rule_is_exact_through_degree_39() {
        let cube = gauss_legendre_integrate(|x| x * x * x, 0.0, 1.0).unwrap();
        assert!((cube - 0.25).abs() < 1e-15);
        let one = gauss_legendre_integrate(|_| 1.0, 2.0, 5.0).unwrap();
        assert!((one - 3.0).abs() < 1e-14);
        let high = gauss_legendre_integrate(|x: f64| x.powi(38), 0.0, 1.0).unwrap();
        assert!((high - 1.0 / 39.0).abs() < 1e-15);
        let deg39 = gauss_legendre_integrate(|x: f64| x.powi(39), -1.0, 2.0).unwrap();
        assert!((deg39 / ((2f64.powi(40) - 1.0) / 40.0) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn weights_sum_to_interval_length() {
        let r = GaussLegendre::new(20);
        let s: f64 = r.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn reversed_bounds_are_rejected() {
        let err = gauss_legendre_integrate(|x| x, 1.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn head_cutoff_follows_five_percent_rule() {
        let rule = SumRule::default();
        assert_eq!(rule.head_cutoff_rule(20), 1);
        assert_eq!(rule.head_cutoff_rule(1000), 50);
        assert_eq!(rule.head_cutoff_rule(10_000_000), 100);
        for n in 20..5000u64 {
            let l = rule.head_cutoff_rule(n);
            assert!(l >= 1 && l <= n.min(100));
        }
        assert_eq!(rule.head_cutoff(10), 10);
        assert_eq!(rule.head_cutoff(1000), 50);
    }

    #[test]
    fn small_sums_are_exact() {
        let rule = SumRule::default();
        let s = hybrid_power_sum(&rule, 10, |m| 1.0 / (m.n * m.n)).unwrap();
        let direct: f64 = (1..=10).map(|n| 1.0 / (n as f64 * n as f64)).sum();
        assert_eq!(s, direct);
        assert!((s - 1.5497677311665408).abs() < 1e-15);
        assert_eq!(hybrid_power_sum(&rule, 5, |_| 1.0).unwrap(), 5.0);
        for n in 1..=100u64 {
            let s = hybrid_power_sum(&rule, n, |m| m.n.powf(-1.3)).unwrap();
            let d: f64 = (1..=n).map(|k| (k as f64).powf(-1.3)).sum();
            assert!((s - d).abs() <= 1e-15 * d);
        }
    }

    #[test]
    fn constant_summand_counts_terms_beyond_head() {
        // ∫ 1 + ½(1 − 1) is exact for a constant.
        let s = hybrid_power_sum(&SumRule::default(), 12_345, |_| 1.0).unwrap();
        assert!((s - 12_345.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_square_matches_brute_force_at_one_million() {
        let s =
            hybrid_power_sum(&SumRule::default(), 1_000_000, |m| (-2.0 * m.ln_n).exp()).unwrap();
        let brute: f64 = (1..=1_000_000u64)
            .rev()
            .map(|n| 1.0 / (n as f64 * n as f64))
            .sum();
        assert!((s / brute - 1.0).abs() < 1e-4, "{s} vs {brute}");
    }

    #[test]
    fn non_finite_summand_names_the_node() {
        let err = hybrid_power_sum(&SumRule::default(), 50, |m| {
            if m.n == 7.0 {
                f64::NAN
            } else {
                1.0
            }
        })
        .unwrap_err();
        assert_eq!(err, Error::NonFinite { node: 7.0 });
    }

    #[test]
    fn dual_sum_partials_match_finite_differences() {
        let rule = SumRule::default();
        let n = 200_000;
        let f = |p: f64| hybrid_power_sum(&rule, n, |m| (-p * m.ln_n).exp()).unwrap();
        let p0 = 1.4;
        let d: Dual<1> =
            hybrid_power_sum(&rule, n, |m| (Dual::<1>::variable(p0, 0) * -m.ln_n).exp()).unwrap();
        let h = 1e-4 * p0;
        let fd =
            (-f(p0 + 2.0 * h) + 8.0 * f(p0 + h) - 8.0 * f(p0 - h) + f(p0 - 2.0 * h)) / (12.0 * h);
        assert!((d.partials[0] / fd - 1.0).abs() < 1e-8);
    }
}
