//! Positive stable PS(α) random effects through the auxiliary-variable
//! representation.
//!
//! The pair (A, B) on (0, ∞) × (0, 1) has joint density
//!
//! ```text
//! p(A, B | α) = α / (1 - α) · A^(-1/(1-α)) · c(B) · exp(-c(B) A^(-α/(1-α)))
//! c(B)        = [sin(απB) / sin(πB)]^(1/(1-α)) · sin((1-α)πB) / sin(απB)
//! ```
//!
//! and A is PS(α) marginally, i.e. E[exp(-tA)] = exp(-t^α). Conditional on B,
//! `W = A^(-α/(1-α))` is exponential with rate c(B), which gives an exact
//! sampler.

use core::f64::consts::PI;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

const B_GUARD: f64 = 1e-12;

/// Auxiliary pair realizing one PS(α) draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StablePair {
    pub a: f64,
    pub b: f64,
}

impl StablePair {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let p = StablePair { a, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !self.a.is_finite() {
            return Err(Error::Domain { name: "A", value: self.a });
        }
        if !(self.b > 0.0 && self.b < 1.0) {
            return Err(Error::Domain { name: "B", value: self.b });
        }
        Ok(())
    }
}

fn check_alpha_open(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain { name: "alpha", value: alpha })
    }
}

/// c(B) for B, α in (0, 1).
pub fn ps_c(b: f64, alpha: f64) -> Result<f64> {
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::Domain { name: "B", value: b });
    }
    check_alpha_open(alpha)?;
    Ok(ln_c(b, alpha).exp())
}

/// log c(B); B is clamped away from {0, 1}.
#[inline]
pub(crate) fn ln_c(b: f64, alpha: f64) -> f64 {
    let b = b.clamp(B_GUARD, 1.0 - B_GUARD);
    let s_a = (alpha * PI * b).sin().ln();
    let s_1 = (PI * b).sin().ln();
    let s_c = ((1.0 - alpha) * PI * b).sin().ln();
    (s_a - s_1) / (1.0 - alpha) + s_c - s_a
}

/// log p(A, B | α).
pub fn ps_joint_logpdf(pair: &StablePair, alpha: f64) -> Result<f64> {
    pair.validate()?;
    check_alpha_open(alpha)?;
    Ok(joint_logpdf_unchecked(pair.a, pair.b, alpha))
}

#[inline]
pub(crate) fn joint_logpdf_unchecked(a: f64, b: f64, alpha: f64) -> f64 {
    let k = 1.0 / (1.0 - alpha);
    let lc = ln_c(b, alpha);
    let ln_a = a.ln();
    alpha.ln() + k.ln() - k * ln_a + lc - (lc - alpha * k * ln_a).exp()
}

/// Exact draw of (A, B): B ~ U(0,1), W ~ Exp(c(B)), A = W^(-(1-α)/α).
/// α = 1 is the point mass A = 1.
pub fn ps_sample<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> Result<StablePair> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain { name: "alpha", value: alpha });
    }
    Ok(sample_unchecked(rng, alpha))
}

#[inline]
pub(crate) fn sample_unchecked<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> StablePair {
    let b: f64 = rng.sample(Open01);
    if alpha == 1.0 {
        return StablePair { a: 1.0, b };
    }
    let e: f64 = rng.sample(Exp1);
    // ln W = ln E - ln c(B)
    let ln_w = e.ln() - ln_c(b, alpha);
    let a = (-(1.0 - alpha) / alpha * ln_w).exp();
    StablePair { a, b }
}
