//! Numerical kernels shared by every evaluator: forward-mode duals,
//! Gauss–Legendre quadrature, the exact-head mode sum, zeta tails and
//! geometric sums of contraction factors. All functions are pure.

mod dual;
mod geometric;
mod quadrature;
mod zeta;

pub use dual::{Dual, Real};
pub use geometric::{
    contraction_pow, contraction_pow_sq, geometric_sum_sq, geometric_sum_sq_step, ln_abs_one_minus,
};
pub use quadrature::{
    gauss_legendre_integrate, hybrid_power_sum, GaussLegendre, Mode, ModeQuadrature, SumRule,
    DEFAULT_POINTS,
};
pub use zeta::{hurwitz_zeta, zeta_tail, zeta_tail_generic};
