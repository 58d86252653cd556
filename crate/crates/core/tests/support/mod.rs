//! Oracles shared by the core integration tests and the acceptance target.

#![allow(dead_code)]

use maxstable::basis::{KernelBasis, KnotGrid, Point};
use maxstable::dataset::{plain_sites, Dataset};
use maxstable::gevdist::{gev_logpdf, gev_sample, GevParams};
use maxstable::mcmc::{fit, FieldSpec, FitConfig, ModelSpec, Which};
use maxstable::process::{simulate, ProcessModel, SpatialGevFields};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn one_site_data(n_years: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = GevParams::new(5.0, 1.0, 0.1).unwrap();
    let y: Vec<f64> = (0..n_years).map(|_| gev_sample(&mut rng, &p).unwrap()).collect();
    Dataset::new(plain_sites(&[Point::new(0.0, 0.0)]), (1..=n_years as i64).collect(), y).unwrap()
}

/// Normal priors (mean, sd) on μ, γ = log σ and ξ.
pub type Priors = [(f64, f64); 3];

pub const VAGUE: Priors = [(0.0, 10.0), (0.0, 10.0), (0.0, 10.0)];
/// γ and ξ pinned near the truth, leaving a one-dimensional posterior for μ.
pub const PINNED: Priors = [(0.0, 10.0), (0.0, 1e-3), (0.1, 1e-3)];


/// One site with a single knot on it, so θ = A^α and, with α held fixed, the
/// marginal likelihood is the plain GEV likelihood.
pub fn one_site_spec(alpha: f64, priors: Priors) -> ModelSpec {
    let c = |(m, s): (f64, f64)| FieldSpec::Constant { prior_mean: m, prior_sd: s };
    ModelSpec {
        knots: KnotGrid::from_points(vec![Point::new(0.0, 0.0)]).unwrap(),
        mu: c(priors[0]),
        gamma: c(priors[1]),
        xi: c(priors[2]),
        alpha_fixed: Some(alpha),
    }
}

/// Marginal posterior CDFs of (μ, γ, ξ) on a regular grid, by brute-force
/// quadrature of the GEV likelihood times the normal priors.
pub struct Quadrature {
    pub axes: [Vec<f64>; 3],
    pub cdfs: [Vec<f64>; 3],
    pub edge_mass: f64,
}

impl Quadrature {
    pub fn new(y: &[f64], priors: Priors, ranges: [(f64, f64); 3], k: usize) -> Self {
        let axes = ranges.map(|(a, b)| (0..k).map(|j| a + (b - a) * j as f64 / (k - 1) as f64).collect::<Vec<_>>());
        let mut lp = vec![0.0; k * k * k];
        for (a, &mu) in axes[0].iter().enumerate() {
            for (b, &g) in axes[1].iter().enumerate() {
                for (c, &xi) in axes[2].iter().enumerate() {
                    let p = GevParams { mu, sigma: g.exp(), xi };
                    let ll: f64 = y.iter().map(|&v| gev_logpdf(v, &p).unwrap()).sum();
                    let prior: f64 = [mu, g, xi].iter().zip(&priors).map(|(x, (m, s))| -((x - m) / s).powi(2) / 2.0).sum();
                    lp[(a * k + b) * k + c] = ll + prior;
                }
            }
        }
        let m = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lp.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut marg = [vec![0.0; k], vec![0.0; k], vec![0.0; k]];
        let mut edge = 0.0;
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    let v = w[(a * k + b) * k + c] / total;
                    marg[0][a] += v;
                    marg[1][b] += v;
                    marg[2][c] += v;
                    if [a, b, c].iter().any(|&j| j == 0 || j == k - 1) {
                        edge += v;
                    }
                }
            }
        }
        // cell-centred cumulative sums, linearly interpolated
        let cdfs = marg.map(|m| {
            let mut acc = 0.0;
            m.iter()
                .map(|v| {
                    acc += v;
                    acc - v / 2.0
                })
                .collect()
        });
        Quadrature { axes, cdfs, edge_mass: edge }
    }

    pub fn cdf(&self, which: usize, x: f64) -> f64 {
        let (ax, f) = (&self.axes[which], &self.cdfs[which]);
        if x <= ax[0] {
            return 0.0;
        }
        let h = ax[1] - ax[0];
        let j = ((x - ax[0]) / h).floor() as usize;
        if j + 1 >= ax.len() {
            return 1.0;
        }
        let u = (x - ax[j]) / h;
        f[j] * (1.0 - u) + f[j + 1] * u
    }
}

pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let x = p * (sorted.len() - 1) as f64;
    let j = x.floor() as usize;
    let u = x - j as f64;
    if j + 1 < sorted.len() {
        sorted[j] * (1.0 - u) + sorted[j + 1] * u
    } else {
        sorted[j]
    }
}

/// Largest |F_oracle(q̂_p) - p| over p = 0.05, 0.10, ..., 0.95.
pub fn max_quantile_gap(q: &Quadrature, which: usize, draws: &mut [f64]) -> f64 {
    draws.sort_by(f64::total_cmp);
    (1..20)
        .map(|k| {
            let p = k as f64 / 20.0;
            (q.cdf(which, empirical_quantile(draws, p)) - p).abs()
        })
        .fold(0.0, f64::max)
}

pub fn posterior_gaps(alpha: f64, priors: Priors, iters: usize) -> [f64; 3] {
    let data = one_site_data(40, 21);
    let ranges = [0, 1, 2].map(|k| {
        let (m, s) = priors[k];
        if s < 0.1 {
            (m - 7.0 * s, m + 7.0 * s)
        } else {
            [(2.5, 7.5), (-1.5, 1.5), (-0.9, 1.1)][k]
        }
    });
    let q = Quadrature::new(data.series(0), priors, ranges, 141);
    assert!(q.edge_mass < 1e-6, "quadrature box too small: {}", q.edge_mass);
    let config = FitConfig { n_iters: iters, burn_in: iters / 10, n_chains: 2, thin: 2, seed: 5, ..Default::default() };
    let s = fit(&data, &one_site_spec(alpha, priors), &config).unwrap();
    for d in &s.diagnostics {
        assert_eq!(d.audit_failures, 0);
    }
    let mut gaps = [0.0; 3];
    for (k, w) in Which::ALL.into_iter().enumerate() {
        let mut v = s.field_at(w, 0);
        gaps[k] = max_quantile_gap(&q, k, &mut v);
    }
    gaps
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

pub fn small_spatial_data(seed: u64, n_years: usize, knots_m: usize) -> (Dataset, KnotGrid) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites = KnotGrid::regular(5, 0.0, 6.0).unwrap().knots().to_vec();
    let knots = KnotGrid::regular(knots_m, 0.0, 6.0).unwrap();
    let fields = SpatialGevFields::constant(sites.len(), 0.0, 1.0, 0.1).unwrap();
    let model = ProcessModel::new(fields, KernelBasis::new(knots.clone(), 2.0).unwrap(), 0.4).unwrap();
    let sim = simulate(&mut rng, &model, &sites, n_years).unwrap();
    (Dataset::from_year_major(plain_sites(&sites), (1..=n_years as i64).collect(), &sim.values).unwrap(), knots)
}

