use crate::error::{Error, Result};
use crate::scalar::{lit, sigmoid, Scalar};

/// Lower/upper clamp applied to edge probabilities before taking logs.
pub const EDGE_PROB_CLAMP: f64 = 1e-6;

/// Concrete relaxation of an edge indicator:
/// `sigmoid((ln ρ̂ + ln u − ln(1−u)) / λ0)`.
pub fn sample_concrete<F: Scalar>(edge_prob: F, temperature: F, u: F) -> Result<F> {
    if !(temperature > F::zero()) {
        return Err(Error::Domain(format!("temperature {temperature} must be positive")));
    }
    if !(u > F::zero() && u < F::one()) {
        return Err(Error::Domain(format!("uniform draw {u} outside (0, 1)")));
    }
    let p = clamp_prob(edge_prob);
    let a = sigmoid(concrete_logit(p, temperature, u));
    if !a.is_finite() {
        return Err(Error::Numerical("concrete sample is not finite".into()));
    }
    Ok(a)
}

#[inline]
pub(crate) fn clamp_prob<F: Scalar>(p: F) -> F {
    let lo: F = lit(EDGE_PROB_CLAMP);
    p.max(lo).min(F::one() - lo)
}

/// Pre-sigmoid value of the concrete sample for an already clamped probability.
#[inline]
pub(crate) fn concrete_logit<F: Scalar>(clamped_prob: F, temperature: F, u: F) -> F {
    (clamped_prob.ln() + u.ln() - (-u).ln_1p()) / temperature
}

/// `μ̂ + σ̂·g`
#[inline]
pub fn sample_gaussian_reparam<F: Scalar>(mean: F, scale: F, g: F) -> F {
    mean + scale * g
}
