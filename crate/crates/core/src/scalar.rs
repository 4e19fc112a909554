//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Everything is generic over [`Scalar`], which is implemented for `f32` and
//! `f64`. Random draws are produced in `f64` and cast into the working type.

use ndarray::NdFloat;
use num_traits::FromPrimitive;
use std::iter::Sum;

/// Floating point type usable by the model: `f32` or `f64`.
pub trait Scalar: NdFloat + FromPrimitive + Sum + Default {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Lossy conversion from an `f64` literal.
#[inline]
pub fn lit<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 literal representable in scalar type")
}

/// `0.5 * ln(2π)`
#[inline]
pub fn half_ln_2pi<F: Scalar>() -> F {
    lit(0.918_938_533_204_672_8)
}

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `x`.
#[inline]
pub fn softplus<F: Scalar>(x: F) -> F {
    if x > lit(30.0) {
        x
    } else if x < lit(-30.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv<F: Scalar>(y: F) -> F {
    if y > lit(30.0) {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// `ln(p / (1 - p))`
#[inline]
pub fn logit<F: Scalar>(p: F) -> F {
    p.ln() - (-p).ln_1p()
}

/// Stable `ln Σ exp(xᵢ)`. Returns `-∞` for an empty slice.
pub fn log_sum_exp<F: Scalar>(xs: &[F]) -> F {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if !max.is_finite() {
        return max;
    }
    let s: F = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Row-wise softmax of `logits` into `out`.
pub fn softmax_into<F: Scalar>(logits: &[F], out: &mut [F]) {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}
