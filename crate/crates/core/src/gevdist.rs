//! Generalized extreme value distribution.
//!
//! With `u = (y - μ)/σ`, the distribution function is `exp(-t(y))` where
//! `t(y) = (1 + ξu)^(-1/ξ)` for ξ ≠ 0 and `t(y) = exp(-u)` for ξ = 0, and the
//! density is `t(y)^(ξ+1) exp(-t(y)) / σ`. Shapes with |ξ| below
//! [`GUMBEL_TOL`] are evaluated with the Gumbel formulas.

use rand::distr::Open01;
use rand::Rng;

use crate::error::{Error, Result};

/// Shapes with |ξ| below this are treated as exactly Gumbel.
pub const GUMBEL_TOL: f64 = 1e-8;

/// Location, scale and shape of a GEV distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GevParams {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        let p = GevParams { mu, sigma, xi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Parameter { name: "sigma", value: self.sigma });
        }
        if !self.mu.is_finite() {
            return Err(Error::Parameter { name: "mu", value: self.mu });
        }
        if !self.xi.is_finite() {
            return Err(Error::Parameter { name: "xi", value: self.xi });
        }
        Ok(())
    }

    #[inline]
    pub fn is_gumbel(&self) -> bool {
        self.xi.abs() < GUMBEL_TOL
    }

    /// Closed support interval `[lower, upper]`.
    pub fn support(&self) -> (f64, f64) {
        if self.is_gumbel() {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else if self.xi > 0.0 {
            (self.mu - self.sigma / self.xi, f64::INFINITY)
        } else {
            (f64::NEG_INFINITY, self.mu - self.sigma / self.xi)
        }
    }

    /// log t(y), or `None` when y is outside the open support.
    #[inline]
    fn ln_t(&self, y: f64) -> Option<f64> {
        let u = (y - self.mu) / self.sigma;
        if self.is_gumbel() {
            Some(-u)
        } else {
            let z = self.xi * u;
            if z <= -1.0 {
                None
            } else {
                Some(-z.ln_1p() / self.xi)
            }
        }
    }
}

/// P(Y < y). Returns exactly 0 or 1 outside the support.
pub fn gev_cdf(y: f64, p: &GevParams) -> Result<f64> {
    p.validate()?;
    Ok(cdf_unchecked(y, p))
}

pub(crate) fn cdf_unchecked(y: f64, p: &GevParams) -> f64 {
    match p.ln_t(y) {
        Some(ln_t) => (-ln_t.exp()).exp(),
        None if p.xi > 0.0 => 0.0,
        None => 1.0,
    }
}

/// Log density; -∞ outside the support.
pub fn gev_logpdf(y: f64, p: &GevParams) -> Result<f64> {
    p.validate()?;
    Ok(logpdf_unchecked(y, p))
}

#[inline]
pub(crate) fn logpdf_unchecked(y: f64, p: &GevParams) -> f64 {
    match p.ln_t(y) {
        Some(ln_t) => {
            let lp = -p.sigma.ln() + (p.xi + 1.0) * ln_t - ln_t.exp();
            if lp.is_nan() {
                f64::NEG_INFINITY
            } else {
                lp
            }
        }
        None => f64::NEG_INFINITY,
    }
}

/// Inverse of [`gev_cdf`]: `μ + σ[(-log q)^(-ξ) - 1]/ξ`, or `μ - σ log(-log q)`
/// in the Gumbel case.
pub fn gev_quantile(q: f64, p: &GevParams) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain { name: "q", value: q });
    }
    p.validate()?;
    Ok(quantile_unchecked(q, p))
}

#[inline]
pub(crate) fn quantile_unchecked(q: f64, p: &GevParams) -> f64 {
    let ln_neg_ln_q = (-q.ln()).ln();
    if p.is_gumbel() {
        p.mu - p.sigma * ln_neg_ln_q
    } else {
        p.mu + p.sigma * (-p.xi * ln_neg_ln_q).exp_m1() / p.xi
    }
}

/// Inverse-CDF draw from GEV(p).
pub fn gev_sample<R: Rng + ?Sized>(rng: &mut R, p: &GevParams) -> Result<f64> {
    p.validate()?;
    Ok(sample_unchecked(rng, p))
}

#[inline]
pub(crate) fn sample_unchecked<R: Rng + ?Sized>(rng: &mut R, p: &GevParams) -> f64 {
    let u: f64 = rng.sample(Open01);
    quantile_unchecked(u, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gp(mu: f64, sigma: f64, xi: f64) -> GevParams {
        GevParams::new(mu, sigma, xi).unwrap()
    }

    #[test]
    fn cdf_reference_values() {
        let e1 = (-1.0f64).exp();
        assert!((gev_cdf(0.0, &gp(0.0, 1.0, 0.0)).unwrap() - e1).abs() < 1e-15);
        assert!((gev_cdf(1.0, &gp(1.0, 1.0, 1.0)).unwrap() - e1).abs() < 1e-15);
        let expect = (-(1.4f64).powf(-5.0)).exp();
        assert!((gev_cdf(2.0, &gp(0.0, 1.0, 0.2)).unwrap() - expect).abs() < 1e-15);
    }

    // Simpson integration of the density from the lower support bound.
    #[test]
    fn cdf_matches_integrated_density() {
        let p = gp(0.0, 1.0, 0.2);
        let (lo, _) = p.support();
        let n = 200_000;
        let h = (2.0 - lo) / n as f64;
        let f = |y: f64| logpdf_unchecked(y, &p).exp();
        let mut s = f(lo) + f(2.0);
        for k in 1..n {
            s += f(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        let integral = s * h / 3.0;
        assert!((integral - gev_cdf(2.0, &p).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn outside_support_is_exact() {
        let weibull = gp(0.0, 1.0, -0.5);
        assert_eq!(gev_cdf(3.0, &weibull).unwrap(), 1.0);
        assert_eq!(gev_logpdf(3.0, &weibull).unwrap(), f64::NEG_INFINITY);
        let frechet = gp(0.0, 1.0, 0.5);
        assert_eq!(gev_cdf(-3.0, &frechet).unwrap(), 0.0);
        assert_eq!(gev_logpdf(-3.0, &frechet).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn logpdf_reference_values() {
        assert!((gev_logpdf(0.0, &gp(0.0, 1.0, 0.0)).unwrap() + 1.0).abs() < 1e-15);
        let p = gp(0.0, 1.0, 0.2);
        let h = 1e-6;
        let fd = (gev_cdf(2.0 + h, &p).unwrap() - gev_cdf(2.0 - h, &p).unwrap()) / (2.0 * h);
        let dens = gev_logpdf(2.0, &p).unwrap().exp();
        assert!((dens / fd - 1.0).abs() < 1e-5);
    }

    #[test]
    fn invalid_scale_is_rejected() {
        let bad = GevParams { mu: 0.0, sigma: 0.0, xi: 0.1 };
        assert!(matches!(gev_cdf(0.0, &bad), Err(Error::Parameter { name: "sigma", .. })));
        assert!(gev_logpdf(0.0, &bad).is_err());
        assert!(GevParams::new(0.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn quantile_reference_values() {
        let q = (-1.0f64).exp();
        assert!(gev_quantile(q, &gp(0.0, 1.0, 0.0)).unwrap().abs() < 1e-15);
        assert!((gev_quantile(q, &gp(1.0, 1.0, 1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!(gev_quantile(0.0, &gp(0.0, 1.0, 0.0)).is_err());
        assert!(gev_quantile(1.0, &gp(0.0, 1.0, 0.0)).is_err());
        assert!(gev_quantile(f64::NAN, &gp(0.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn quantile_round_trip_on_random_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = gp(
                rng.random_range(-5.0..5.0),
                rng.random_range(0.1..4.0),
                rng.random_range(-0.8..0.8),
            );
            for &q in &[0.1, 0.5, 0.95] {
                let y = gev_quantile(q, &p).unwrap();
                assert!((gev_cdf(y, &p).unwrap() - q).abs() < 1e-10, "{p:?} q={q}");
            }
        }
    }

    #[test]
    fn gumbel_limit_is_continuous() {
        for k in -40..=40 {
            let y = k as f64 * 0.25;
            let a = gev_cdf(y, &gp(0.3, 1.2, 1e-9)).unwrap();
            let b = gev_cdf(y, &gp(0.3, 1.2, 0.0)).unwrap();
            assert!((a - b).abs() < 1e-6);
            let c = gev_cdf(y, &gp(0.3, 1.2, 2e-8)).unwrap();
            assert!((c - b).abs() < 1e-6);
        }
    }

    #[test]
    fn samples_respect_support_and_seed() {
        let p = gp(0.0, 1.0, -0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            assert!(gev_sample(&mut rng, &p).unwrap() <= 2.0);
        }
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| gev_sample(&mut r, &p).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }
}
