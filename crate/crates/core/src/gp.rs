//! Gaussian-process priors for spatially varying GEV parameters.
//!
//! Matérn covariance uses distance divided by ρ with no √(2ν) factor, so
//! ν = 0.5 gives exactly `δ² exp(-d/ρ)`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::basis::Point;
use crate::error::{Error, Result};
use crate::special::{bessel_k, ln_gamma};

/// Relative diagonal jitter added to every covariance matrix.
pub const JITTER: f64 = 1e-8;

/// Fixed spike variance Δ₀².
pub const SPIKE_VARIANCE: f64 = 1e-4;

/// Mean coefficients and Matérn covariance parameters of one GP prior.
#[derive(Clone, Debug, PartialEq)]
pub struct GpHyper {
    pub beta: Vec<f64>,
    pub delta2: f64,
    pub rho: f64,
    pub nu: f64,
}

impl GpHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("delta2", self.delta2), ("rho", self.rho), ("nu", self.nu)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter { name, value: v });
            }
        }
        Ok(())
    }
}

/// Matérn correlation at distance d.
#[inline]
pub fn matern_corr(d: f64, rho: f64, nu: f64) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let x = d / rho;
    if nu == 0.5 {
        return (-x).exp();
    }
    let v = ((1.0 - nu) * 2f64.ln() - ln_gamma(nu) + nu * x.ln()).exp() * bessel_k(nu, x);
    // K_ν underflows far out; the correlation is then zero to double precision
    if v.is_finite() {
        v.min(1.0)
    } else {
        0.0
    }
}

/// δ² · 2^(1-ν)/Γ(ν) · (d/ρ)^ν · K_ν(d/ρ).
pub fn matern_cov(d: f64, h: &GpHyper) -> Result<f64> {
    h.validate()?;
    if !(d >= 0.0) {
        return Err(Error::Domain { name: "d", value: d });
    }
    Ok(h.delta2 * matern_corr(d, h.rho, h.nu))
}

/// Correlation matrix R(ρ, ν) + jitter·I.
pub fn corr_matrix(sites: &[Point], rho: f64, nu: f64) -> DMatrix<f64> {
    let n = sites.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 + JITTER
        } else {
            matern_corr(sites[i].dist(&sites[j]), rho, nu)
        }
    })
}

/// Pairwise Matérn covariance with `JITTER·δ²` on the diagonal.
pub fn cov_matrix(sites: &[Point], h: &GpHyper) -> Result<DMatrix<f64>> {
    h.validate()?;
    let m = corr_matrix(sites, h.rho, h.nu) * h.delta2;
    if m.clone().cholesky().is_none() {
        return Err(Error::Numerical("covariance matrix is not positive definite"));
    }
    Ok(m)
}

/// Mean and variance of component `i` given all others under N(mean, cov).
pub fn conditional_normal(i: usize, values: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Result<(f64, f64)> {
    let n = values.len();
    if mean.len() != n || cov.nrows() != n || cov.ncols() != n || i >= n {
        return Err(Error::Input("conditional normal: inconsistent dimensions".into()));
    }
    if n == 1 {
        return Ok((mean[0], cov[(0, 0)]));
    }
    let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    let sub = DMatrix::from_fn(n - 1, n - 1, |a, b| cov[(others[a], others[b])]);
    let chol = sub.cholesky().ok_or(Error::Numerical("singular conditioning covariance"))?;
    let cross = DVector::from_fn(n - 1, |a, _| cov[(i, others[a])]);
    let resid = DVector::from_fn(n - 1, |a, _| values[others[a]] - mean[others[a]]);
    let k = chol.solve(&cross);
    let m = mean[i] + k.dot(&resid);
    let v = cov[(i, i)] - k.dot(&cross);
    Ok((m, v.max(0.0)))
}

/// Cholesky factor, inverse and log-determinant of a correlation matrix.
#[derive(Clone, Debug)]
pub struct CorrelationFactor {
    pub rho: f64,
    pub nu: f64,
    lower: DMatrix<f64>,
    precision: DMatrix<f64>,
    logdet: f64,
}

impl CorrelationFactor {
    pub fn new(sites: &[Point], rho: f64, nu: f64) -> Result<Self> {
        let r = corr_matrix(sites, rho, nu);
        let chol = r.cholesky().ok_or(Error::Numerical("correlation matrix is not positive definite"))?;
        let lower = chol.l();
        let logdet = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(CorrelationFactor { rho, nu, lower, precision, logdet })
    }

    pub fn len(&self) -> usize {
        self.precision.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// rᵀ R⁻¹ r.
    pub fn quad_form(&self, r: &[f64]) -> f64 {
        let n = r.len();
        let mut q = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.precision[(i, j)] * r[j];
            }
            q += r[i] * row;
        }
        q
    }

    /// Mean and variance of `values[i]` given the others under N(mean, δ²R).
    #[inline]
    pub fn conditional(&self, i: usize, values: &[f64], mean: &[f64], delta2: f64) -> (f64, f64) {
        let qii = self.precision[(i, i)];
        let mut s = 0.0;
        for j in 0..values.len() {
            if j != i {
                s += self.precision[(i, j)] * (values[j] - mean[j]);
            }
        }
        (mean[i] - s / qii, delta2 / qii)
    }

    /// log N(r; 0, δ²R).
    pub fn log_density(&self, r: &[f64], delta2: f64) -> f64 {
        let n = r.len() as f64;
        -0.5 * (n * (2.0 * core::f64::consts::PI).ln() + n * delta2.ln() + self.logdet + self.quad_form(r) / delta2)
    }
}

/// Draw a GP field N(mean, δ²R(ρ, ν)) at the sites.
pub fn sample_field<R: Rng + ?Sized>(rng: &mut R, sites: &[Point], h: &GpHyper, mean: &[f64]) -> Result<Vec<f64>> {
    h.validate()?;
    let f = CorrelationFactor::new(sites, h.rho, h.nu)?;
    let z = DVector::from_fn(sites.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = f.lower() * z * h.delta2.sqrt();
    Ok(x.iter().zip(mean).map(|(a, m)| a + m).collect())
}

/// Conjugate draw of the mean coefficients given a field, with independent
/// N(0, prior_sd²) priors.
pub fn gibbs_beta<R: Rng + ?Sized>(
    rng: &mut R,
    design: &DMatrix<f64>,
    values: &[f64],
    factor: &CorrelationFactor,
    delta2: f64,
    prior_sd: f64,
) -> Result<Vec<f64>> {
    let p = design.ncols();
    let v = DVector::from_column_slice(values);
    let xt_q = design.transpose() * factor.precision();
    let mut prec = &xt_q * design / delta2;
    for k in 0..p {
        prec[(k, k)] += 1.0 / (prior_sd * prior_sd);
    }
    let rhs = &xt_q * v / delta2;
    let chol = prec.cholesky().ok_or(Error::Numerical("beta posterior precision is singular"))?;
    let mean = chol.solve(&rhs);
    let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    // L Lᵀ = P, so L⁻ᵀ z ~ N(0, P⁻¹)
    let noise = chol.l().transpose().solve_upper_triangular(&z).ok_or(Error::Numerical("triangular solve"))?;
    Ok((mean + noise).iter().copied().collect())
}

/// Spike-slab selection on a GP variance: δ² = g·δ*² + (1-g)·Δ₀².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpikeSlabState {
    pub g: bool,
    pub delta_star2: f64,
    pub delta0_2: f64,
}

impl SpikeSlabState {
    pub fn new(g: bool, delta_star2: f64) -> Self {
        SpikeSlabState { g, delta_star2, delta0_2: SPIKE_VARIANCE }
    }

    pub fn effective_delta2(&self) -> f64 {
        if self.g {
            self.delta_star2
        } else {
            self.delta0_2
        }
    }
}

/// Prior on the slab: g ~ Bernoulli(p_slab), δ*² ~ InvGamma(shape, scale).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpikeSlabPrior {
    pub p_slab: f64,
    pub shape: f64,
    pub scale: f64,
}

impl Default for SpikeSlabPrior {
    fn default() -> Self {
        SpikeSlabPrior { p_slab: 0.5, shape: 0.1, scale: 0.1 }
    }
}

/// Draw from InvGamma(shape, scale).
pub fn sample_inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    let g = Gamma::new(shape, 1.0 / scale).expect("positive gamma parameters");
    1.0 / g.sample(rng)
}

/// Joint move on (g, δ*²) given residuals `r = field - Xβ`.
///
/// Flipping g proposes δ*² from its exact conditional under the new g
/// (InvGamma posterior in the slab, the prior in the spike), so the
/// Metropolis ratio reduces to the ratio of δ*²-marginal likelihoods. A
/// Gibbs refresh of δ*² follows.
pub fn spike_slab_update<R: Rng + ?Sized>(
    rng: &mut R,
    state: &SpikeSlabState,
    residuals: &[f64],
    factor: &CorrelationFactor,
    prior: &SpikeSlabPrior,
) -> SpikeSlabState {
    let n = residuals.len() as f64;
    let q = factor.quad_form(residuals);
    let (a, b) = (prior.shape, prior.scale);
    // log m1 - log m0; the common -(n/2)log 2π - ½log|R| cancels
    let log_m1 = a * b.ln() - ln_gamma(a) + ln_gamma(a + 0.5 * n) - (a + 0.5 * n) * (b + 0.5 * q).ln();
    let log_m0 = -0.5 * n * state.delta0_2.ln() - 0.5 * q / state.delta0_2;
    let log_prior_odds = (prior.p_slab / (1.0 - prior.p_slab)).ln();
    let log_odds = log_m1 - log_m0 + log_prior_odds;
    let log_r = if state.g { -log_odds } else { log_odds };
    let u: f64 = rng.sample(Open01);
    let g = if u.ln() < log_r { !state.g } else { state.g };
    let delta_star2 = if g {
        sample_inv_gamma(rng, a + 0.5 * n, b + 0.5 * q)
    } else {
        sample_inv_gamma(rng, a, b)
    };
    SpikeSlabState { g, delta_star2, delta0_2: state.delta0_2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hyper(delta2: f64, rho: f64, nu: f64) -> GpHyper {
        GpHyper { beta: alloc::vec![0.0], delta2, rho, nu }
    }

    #[test]
    fn matern_reference_values() {
        let h = hyper(2.5, 1.7, 0.5);
        assert_eq!(matern_cov(0.0, &h).unwrap(), 2.5);
        assert!((matern_cov(1.7, &h).unwrap() - 2.5 * (-1.0f64).exp()).abs() < 1e-15);
        // K_{3/2}(x) = sqrt(π/2x) e^{-x} (1 + 1/x) gives (1 + x) e^{-x}
        let h = hyper(1.3, 0.8, 1.5);
        assert!((matern_cov(0.8, &h).unwrap() - 1.3 * 2.0 * (-1.0f64).exp()).abs() < 1e-13);
        let h = hyper(1.0, 1.0, 2.5);
        let x: f64 = 0.7;
        let closed = (1.0 + x + x * x / 3.0) * (-x).exp();
        assert!((matern_cov(x, &h).unwrap() - closed).abs() < 1e-13);
        assert!(matern_cov(1.0, &hyper(0.0, 1.0, 0.5)).is_err());
        assert!(matern_cov(1.0, &hyper(1.0, -1.0, 0.5)).is_err());
    }

    #[test]
    fn matern_is_nonincreasing() {
        for &nu in &[0.5, 1.5, 0.8, 3.0] {
            let h = hyper(1.0, 1.2, nu);
            let mut prev = f64::INFINITY;
            for k in 0..400 {
                let v = matern_cov(k as f64 * 0.05, &h).unwrap();
                assert!(v <= prev + 1e-15, "nu={nu} k={k}");
                prev = v;
            }
        }
    }

    #[test]
    fn cov_matrix_elementwise() {
        let sites = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(3.0, 0.0)];
        let h = hyper(2.0, 2.0, 0.5);
        let m = cov_matrix(&sites, &h).unwrap();
        assert_eq!(m, cov_matrix(&sites, &h).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                let d = sites[i].dist(&sites[j]);
                let expect = 2.0 * (-d / 2.0).exp() + if i == j { 2.0 * JITTER } else { 0.0 };
                assert!((m[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn conditional_normal_cases() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 1.0]);
        let (m, v) = conditional_normal(1, &[5.0, 6.0, 7.0], &[1.0, 2.0, 3.0], &cov).unwrap();
        assert_eq!((m, v), (2.0, 3.0));

        let (d1, d2, r) = (1.5, 0.7, 0.6);
        let cov = DMatrix::from_row_slice(2, 2, &[d1 * d1, r * d1 * d2, r * d1 * d2, d2 * d2]);
        let (m, v) = conditional_normal(0, &[0.0, 2.0], &[1.0, 0.5], &cov).unwrap();
        assert!((m - (1.0 + r * d1 / d2 * (2.0 - 0.5))).abs() < 1e-14);
        assert!((v - d1 * d1 * (1.0 - r * r)).abs() < 1e-14);
        assert!(v <= cov[(0, 0)]);

        let singular = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(conditional_normal(0, &[0.0; 3], &[0.0; 3], &singular).is_err());
    }

    #[test]
    fn factor_conditional_matches_generic() {
        let sites: Vec<Point> = (0..6).map(|k| Point::new(k as f64 * 0.7, (k * k) as f64 * 0.1)).collect();
        let f = CorrelationFactor::new(&sites, 1.4, 1.5).unwrap();
        let h = hyper(0.9, 1.4, 1.5);
        let cov = corr_matrix(&sites, 1.4, 1.5) * 0.9;
        let vals = [0.3, -1.0, 0.2, 0.9, 1.4, -0.3];
        let mean = [0.1; 6];
        for i in 0..6 {
            let (m1, v1) = f.conditional(i, &vals, &mean, h.delta2);
            let (m2, v2) = conditional_normal(i, &vals, &mean, &cov).unwrap();
            assert!((m1 - m2).abs() < 1e-9 && (v1 - v2).abs() < 1e-9);
        }
    }

    #[test]
    fn spike_value_is_fixed() {
        assert_eq!(SpikeSlabState::new(false, 1.0).delta0_2, 0.01 * 0.01);
    }

    #[test]
    fn spike_slab_prefers_slab_for_spatial_field() {
        let sites: Vec<Point> = (0..49).map(|k| Point::new((k % 7) as f64, (k / 7) as f64)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = hyper(1.0, 2.0, 0.5);
        let field = sample_field(&mut rng, &sites, &h, &[0.0; 49]).unwrap();
        let factor = CorrelationFactor::new(&sites, 2.0, 0.5).unwrap();
        let mut s = SpikeSlabState::new(false, 1.0);
        let mut ones = 0;
        for _ in 0..2000 {
            s = spike_slab_update(&mut rng, &s, &field, &factor, &SpikeSlabPrior::default());
            ones += s.g as usize;
        }
        assert!(ones as f64 / 2000.0 > 0.9);
    }

    #[test]
    fn spike_slab_prefers_spike_for_flat_field() {
        let sites: Vec<Point> = (0..49).map(|k| Point::new((k % 7) as f64, (k / 7) as f64)).collect();
        let factor = CorrelationFactor::new(&sites, 2.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = SpikeSlabState::new(true, 1.0);
        let mut ones = 0;
        for _ in 0..2000 {
            s = spike_slab_update(&mut rng, &s, &[0.0; 49], &factor, &SpikeSlabPrior::default());
            ones += s.g as usize;
        }
        assert!((ones as f64 / 2000.0) < 0.5);
    }
}
