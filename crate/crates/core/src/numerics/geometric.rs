//! Powers and geometric sums of the per-step contraction factor `1 − a`.
//!
//! Everything is computed from the step `a` (rather than `ρ = 1 − a`) so that
//! tiny steps on tail modes lose no precision: `ln|1 − a|` goes through
//! `ln_1p` and `1 − ρ²` is formed as `a(2 − a)`.

use super::dual::Real;

/// Below this value of `K·|ln ρ²|` the geometric sum uses its series about `ρ² = 1`.
const SERIES_THRESHOLD: f64 = 1e-6;

/// `ln|1 − a|`.
#[inline]
pub fn ln_abs_one_minus<S: Real>(a: S) -> S {
    if a.value() < 1.0 {
        (-a).ln_1p()
    } else {
        (a - 1.0).ln()
    }
}

/// `(1 − a)^{2k}`, evaluated in log-magnitude space.
#[inline]
pub fn contraction_pow_sq<S: Real>(a: S, k: u64) -> S {
    if k == 0 {
        return S::cst(1.0);
    }
    if a.value() == 1.0 {
        return S::zero();
    }
    (ln_abs_one_minus(a) * (2.0 * k as f64)).exp()
}

/// Signed `(1 − a)^k`.
#[inline]
pub fn contraction_pow<S: Real>(a: S, k: u64) -> S {
    if k == 0 {
        return S::cst(1.0);
    }
    if a.value() == 1.0 {
        return S::zero();
    }
    let mag = (ln_abs_one_minus(a) * k as f64).exp();
    if a.value() > 1.0 && k % 2 == 1 {
        -mag
    } else {
        mag
    }
}

/// `Σ_{j=0}^{k−1} (1 − a)^{2j}`.
#[inline]
pub fn geometric_sum_sq_step<S: Real>(a: S, k: u64) -> S {
    if k == 0 {
        return S::zero();
    }
    if a.value() == 1.0 {
        // Only the j = 0 term survives, and every derivative vanishes there.
        return S::cst(1.0);
    }
    let kf = k as f64;
    let ln_rho2 = ln_abs_one_minus(a) * 2.0;
    if (ln_rho2.value() * kf).abs() < SERIES_THRESHOLD {
        // Σ e^{jℓ} = K + ℓ K(K−1)/2 + ℓ² K(K−1)(2K−1)/12 + …
        let c1 = kf * (kf - 1.0) / 2.0;
        let c2 = kf * (kf - 1.0) * (2.0 * kf - 1.0) / 12.0;
        return ln_rho2 * c1 + ln_rho2 * ln_rho2 * c2 + kf;
    }
    let one_minus_rho2 = a * (-a + 2.0);
    -(ln_rho2 * kf).exp_m1() / one_minus_rho2
}

/// `Σ_{j=0}^{K−1} ρ^{2j}`; total on the reals and continuous across `ρ² = 1`.
pub fn geometric_sum_sq(rho: f64, k: u64) -> f64 {
    geometric_sum_sq_step(1.0 - rho, k)
}
