//! Hurwitz zeta tails `Σ_{n=N+1}^∞ n^{-p}` via Euler–Maclaurin with Bernoulli terms.

use super::dual::Real;
use crate::error::{Error, Result};

/// Terms summed directly before switching to the asymptotic expansion.
const DIRECT_TERMS: u64 = 10;

/// `B_{2j} / (2j)!` for `j = 1..=8`.
const BERNOULLI_OVER_FACTORIAL: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30_240.0,
    -1.0 / 1_209_600.0,
    1.0 / 47_900_160.0,
    -691.0 / 1_307_674_368_000.0,
    1.0 / 74_724_249_600.0,
    -3617.0 / 10_670_622_842_880_000.0,
];

/// `ζ(s, a) = Σ_{k≥0} (a + k)^{-s}` for `s > 1`, `a ≥ 1`.
pub fn hurwitz_zeta<S: Real>(s: S, a: f64) -> Result<S> {
    if !(s.value() > 1.0) {
        return Err(Error::Domain(format!(
            "zeta series diverges for exponent {}",
            s.value()
        )));
    }
    if !(a >= 1.0) {
        return Err(Error::Domain(format!(
            "Hurwitz shift must be >= 1, got {a}"
        )));
    }
    let mut acc = S::zero();
    for k in 0..DIRECT_TERMS {
        acc = acc + (s * -(a + k as f64).ln()).exp();
    }
    let x = a + DIRECT_TERMS as f64;
    let ln_x = x.ln();
    let x_pow = (s * -ln_x).exp(); // x^{-s}
    acc = acc + x_pow * x / (s - 1.0) + x_pow * 0.5;

    // term_j = s(s+1)...(s+2j-2) x^{-s-2j+1}
    let inv_x2 = 1.0 / (x * x);
    let mut rising = s * (x_pow / x);
    for (j, c) in BERNOULLI_OVER_FACTORIAL.iter().enumerate() {
        acc = acc + rising * *c;
        let m = (2 * j + 1) as f64;
        rising = rising * (s + m) * (s + (m + 1.0)) * inv_x2;
    }
    Ok(acc)
}

/// `Σ_{n=N+1}^∞ n^{-p}`; requires `p > 1`.
pub fn zeta_tail_generic<S: Real>(p: S, n: u64) -> Result<S> {
    hurwitz_zeta(p, n as f64 + 1.0)
}

/// `Σ_{n=N+1}^∞ n^{-p}`; requires `p > 1`.
pub fn zeta_tail(p: f64, n: u64) -> Result<f64> {
    zeta_tail_generic(p, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn basel_values() {
        let z = zeta_tail(2.0, 0).unwrap();
        assert!((z - PI * PI / 6.0).abs() < 1e-15);
        let t = zeta_tail(2.0, 1).unwrap();
        assert!((t - (PI * PI / 6.0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn known_zeta_values() {
        assert!((zeta_tail(4.0, 0).unwrap() - PI.powi(4) / 90.0).abs() < 1e-15);
        // ζ(3), Apéry's constant
        assert!((zeta_tail(3.0, 0).unwrap() - 1.202_056_903_159_594_2).abs() < 1e-15);
        // ζ(1.5)
        assert!((zeta_tail(1.5, 0).unwrap() - 2.612_375_348_685_488_3).abs() < 1e-14);
    }

    #[test]
    fn divergent_exponent_is_a_domain_error() {
        assert!(matches!(zeta_tail(1.0, 3), Err(Error::Domain(_))));
        assert!(matches!(zeta_tail(0.5, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn head_plus_tail_is_constant() {
        for &p in &[1.05, 1.12, 1.5, 2.0, 2.5] {
            let total = zeta_tail(p, 0).unwrap();
            let mut head = 0.0;
            for n in 1..=500u64 {
                head += (n as f64).powf(-p);
                let t = zeta_tail(p, n).unwrap();
                assert!(
                    (head + t - total).abs() <= 1e-10 * total.max(1.0),
                    "p={p}, n={n}"
                );
            }
        }
    }

    #[test]
    fn tail_is_monotone_and_vanishes() {
        let mut prev = f64::INFINITY;
        for e in 0..13 {
            let t = zeta_tail(2.0, 10u64.pow(e)).unwrap();
            assert!(t < prev);
            prev = t;
        }
        assert!(zeta_tail(2.0, 1_000_000_000_000).unwrap() < 1e-10);
    }
}
