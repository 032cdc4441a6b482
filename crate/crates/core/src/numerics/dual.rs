//! Forward-mode derivative arithmetic.
//!
//! [`Real`] abstracts over plain `f64` and [`Dual`], so the same summand
//! code produces values and gradients. A `Dual<N>` carries one partial
//! derivative slot per differentiated parameter.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar type accepted by every numerical kernel.
pub trait Real:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(x: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn exp_m1(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(&self) -> bool;

    fn zero() -> Self {
        Self::cst(0.0)
    }
}

impl Real for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    #[inline]
    fn exp_m1(self) -> Self {
        f64::exp_m1(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

/// A value together with its partial derivatives with respect to `N` inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub value: f64,
    pub partials: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(value: f64) -> Self {
        Dual {
            value,
            partials: [0.0; N],
        }
    }

    /// The `index`-th independent variable at `value`.
    pub fn variable(value: f64, index: usize) -> Self {
        let mut partials = [0.0; N];
        partials[index] = 1.0;
        Dual { value, partials }
    }

    #[inline]
    fn chain(self, value: f64, slope: f64) -> Self {
        let mut partials = self.partials;
        for d in partials.iter_mut() {
            *d *= slope;
        }
        Dual { value, partials }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut partials = self.partials;
        for (d, r) in partials.iter_mut().zip(rhs.partials) {
            *d += r;
        }
        Dual {
            value: self.value + rhs.value,
            partials,
        }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut partials = self.partials;
        for (d, r) in partials.iter_mut().zip(rhs.partials) {
            *d -= r;
        }
        Dual {
            value: self.value - rhs.value,
            partials,
        }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut partials = [0.0; N];
        for i in 0..N {
            partials[i] = self.partials[i] * rhs.value + self.value * rhs.partials[i];
        }
        Dual {
            value: self.value * rhs.value,
            partials,
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.value;
        let value = self.value * inv;
        let mut partials = [0.0; N];
        for i in 0..N {
            partials[i] = (self.partials[i] - value * rhs.partials[i]) * inv;
        }
        Dual { value, partials }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.value, -1.0)
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: f64) -> Self {
        Dual {
            value: self.value + rhs,
            partials: self.partials,
        }
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: f64) -> Self {
        Dual {
            value: self.value - rhs,
            partials: self.partials,
        }
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        self.chain(self.value * rhs, rhs)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        let inv = 1.0 / rhs;
        self.chain(self.value * inv, inv)
    }
}

impl<const N: usize> Real for Dual<N> {
    fn cst(x: f64) -> Self {
        Dual::constant(x)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.value
    }
    #[inline]
    fn exp(self) -> Self {
        let v = self.value.exp();
        self.chain(v, v)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.value.ln(), 1.0 / self.value)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        self.chain(self.value.ln_1p(), 1.0 / (1.0 + self.value))
    }
    #[inline]
    fn exp_m1(self) -> Self {
        self.chain(self.value.exp_m1(), self.value.exp())
    }
    #[inline]
    fn sqrt(self) -> Self {
        let v = self.value.sqrt();
        self.chain(v, 0.5 / v)
    }
    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.partials.iter().all(|d| d.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type D2 = Dual<2>;

    fn central<F: Fn(f64, f64) -> f64>(f: F, x: f64, y: f64) -> [f64; 2] {
        let h = 1e-6;
        [
            (f(x + h, y) - f(x - h, y)) / (2.0 * h),
            (f(x, y + h) - f(x, y - h)) / (2.0 * h),
        ]
    }

    fn check<F, G>(generic: G, plain: F, x: f64, y: f64)
    where
        F: Fn(f64, f64) -> f64,
        G: Fn(D2, D2) -> D2,
    {
        let out = generic(D2::variable(x, 0), D2::variable(y, 1));
        assert!((out.value - plain(x, y)).abs() <= 1e-14 * plain(x, y).abs().max(1.0));
        let fd = central(plain, x, y);
        for i in 0..2 {
            let scale = fd[i].abs().max(1e-3);
            assert!(
                (out.partials[i] - fd[i]).abs() <= 1e-7 * scale,
                "partial {i}: {} vs {}",
                out.partials[i],
                fd[i]
            );
        }
    }

    #[test]
    fn product_quotient_and_chain_rules_match_finite_differences() {
        check(|x, y| x * y / (x + y), |x, y| x * y / (x + y), 0.7, 1.9);
        check(
            |x, y| (x * y).exp() - y.ln(),
            |x, y| (x * y).exp() - y.ln(),
            0.3,
            2.5,
        );
        check(
            |x, y| (-x).ln_1p() * y.sqrt(),
            |x, y| (-x).ln_1p() * y.sqrt(),
            0.2,
            3.0,
        );
        check(
            |x, y| (x * 3.0 - y).exp_m1() / 2.0,
            |x, y| (x * 3.0 - y).exp_m1() / 2.0,
            0.4,
            1.1,
        );
        check(
            |x, y| -(x - 1.5) + y * 2.0,
            |x, y| -(x - 1.5) + y * 2.0,
            0.4,
            1.1,
        );
    }

    #[test]
    fn zero_partials_behave_like_plain_reals() {
        let x = D2::constant(1.7);
        let y = D2::constant(0.3);
        let d = ((x * y).exp() + (y / x).ln_1p()).sqrt();
        let p = ((1.7f64 * 0.3).exp() + (0.3f64 / 1.7).ln_1p()).sqrt();
        assert_eq!(d.value, p);
        assert_eq!(d.partials, [0.0, 0.0]);
    }
}
