//! Simulation-study driver: generate data under designs 1–5, fit with a
//! set of knot grids, and score posterior means and 95% intervals.
//!
//! Data live at the 49 sites of S(7,0,6) for T = 10 years. The location
//! field is a GP with mean 0, variance 1 and correlation exp(-d/2); scale 1
//! and shape 0.2 are shared by all sites.

use maxstable::basis::{make_grid, KernelBasis, KnotGrid, Point};
use maxstable::dataset::{plain_sites, Dataset};
use maxstable::gp::{sample_field, GpHyper};
use maxstable::mcmc::{chain_seed, fit, FieldSpec, FitConfig, ModelSpec, PosteriorSamples, Which};
use maxstable::process::{simulate, ProcessModel, SpatialGevFields};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{AppError, Result};

/// One simulation design.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignSpec {
    pub id: u8,
    pub gen_knots: KnotGrid,
    pub alpha: f64,
    pub tau: f64,
    pub sites: Vec<Point>,
    pub n_years: usize,
    pub mu_variance: f64,
    pub mu_range: f64,
    pub sigma: f64,
    pub xi: f64,
    /// Knot grids used for fitting.
    pub fit_grids: Vec<KnotGrid>,
}

impl DesignSpec {
    pub fn new(id: u8) -> Result<Self> {
        let (gen, alpha, tau) = match id {
            1 => (make_grid(7, 0.0, 6.0)?, 0.3, 3.0),
            2 => (make_grid(7, 0.0, 6.0)?, 0.7, 3.0),
            3 => (make_grid(5, 0.0, 6.0)?, 0.3, 3.0),
            4 => (make_grid(5, 0.0, 6.0)?, 0.7, 3.0),
            5 => (make_grid(100, -1.0, 7.0)?, 0.4, 1.0),
            _ => return Err(AppError::Invalid(format!("design must be 1-5, got {id}"))),
        };
        let fit_grids = if id == 5 {
            (5..=12).map(|m| make_grid(m, -1.0, 7.0)).collect::<maxstable::Result<Vec<_>>>()?
        } else {
            vec![make_grid(5, 0.0, 6.0)?, make_grid(7, 0.0, 6.0)?]
        };
        Ok(DesignSpec {
            id,
            gen_knots: gen,
            alpha,
            tau,
            sites: make_grid(7, 0.0, 6.0)?.knots().to_vec(),
            n_years: 10,
            mu_variance: 1.0,
            mu_range: 2.0,
            sigma: 1.0,
            xi: 0.2,
            fit_grids,
        })
    }

    /// Keep only fitting grids with the listed sizes m (m × m knots).
    pub fn with_grids(mut self, ms: &[usize]) -> Result<Self> {
        self.fit_grids.retain(|g| g.m().is_some_and(|m| ms.contains(&m)));
        if self.fit_grids.is_empty() {
            return Err(AppError::Invalid(format!("none of the grids {ms:?} belong to design {}", self.id)));
        }
        Ok(self)
    }

    /// Fitting model: GP location with exponential covariance, constant
    /// log scale ~ N(0, 1) and shape ~ N(0, 0.25²).
    pub fn fit_spec(&self, grid: &KnotGrid) -> ModelSpec {
        ModelSpec {
            knots: grid.clone(),
            mu: FieldSpec::exponential(),
            gamma: FieldSpec::Constant { prior_mean: 0.0, prior_sd: 1.0 },
            xi: FieldSpec::Constant { prior_mean: 0.0, prior_sd: 0.25 },
            alpha_fixed: None,
        }
    }

    /// One synthetic data set and its true location field.
    pub fn simulate(&self, rng: &mut ChaCha8Rng) -> Result<(Dataset, Vec<f64>)> {
        let n = self.sites.len();
        let h = GpHyper { beta: vec![0.0], delta2: self.mu_variance, rho: self.mu_range, nu: 0.5 };
        let mu = sample_field(rng, &self.sites, &h, &vec![0.0; n])?;
        let fields = SpatialGevFields::new(mu.clone(), vec![self.sigma.ln(); n], vec![self.xi; n])?;
        let model = ProcessModel::new(fields, KernelBasis::new(self.gen_knots.clone(), self.tau)?, self.alpha)?;
        let sim = simulate(rng, &model, &self.sites, self.n_years)?;
        let years: Vec<i64> = (1..=self.n_years as i64).collect();
        Ok((Dataset::from_year_major(plain_sites(&self.sites), years, &sim.values)?, mu))
    }
}

/// Replicate count, chain length and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyOptions {
    pub replicates: usize,
    pub n_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
}

impl StudyOptions {
    /// 10 replicates of one 6000-iteration chain.
    pub fn desk() -> Self {
        StudyOptions { replicates: 10, n_iters: 6000, burn_in: 2000, thin: 5, n_chains: 1, seed: 0 }
    }

    /// 50 replicates of 25,000 iterations with 10,000 burn-in.
    pub fn paper() -> Self {
        StudyOptions { replicates: 50, n_iters: 25_000, burn_in: 10_000, ..Self::desk() }
    }

    fn fit_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            n_iters: self.n_iters,
            burn_in: self.burn_in,
            thin: self.thin,
            n_chains: self.n_chains,
            seed,
            ..FitConfig::default()
        }
    }
}

/// Score of one parameter in one replicate under one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateRow {
    pub design: u8,
    pub replicate: usize,
    pub grid_m: usize,
    pub spacing: f64,
    pub n_knots: usize,
    pub param: &'static str,
    /// Root mean squared error of posterior means (over sites for μ).
    pub rmse: f64,
    /// Fraction of 95% intervals covering the truth.
    pub coverage: f64,
    pub ok: bool,
}

/// Averages over successful replicates.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub design: u8,
    pub grid_m: usize,
    pub spacing: f64,
    pub n_knots: usize,
    pub param: &'static str,
    pub mean_rmse: f64,
    pub coverage: f64,
    pub replicates: usize,
    pub failed: usize,
}

pub const PARAMS: [&str; 5] = ["mu", "gamma", "xi", "alpha", "tau"];

/// Linear-interpolated sample quantile.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Posterior mean and equal-tailed 95% interval.
pub fn summarize(draws: &[f64]) -> (f64, f64, f64) {
    let mut v = draws.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, quantile(&v, 0.025), quantile(&v, 0.975))
}

fn score(truth: &[f64], per_site: &[Vec<f64>]) -> (f64, f64) {
    let mut se = 0.0;
    let mut cov = 0.0;
    for (t, d) in truth.iter().zip(per_site) {
        let (m, lo, hi) = summarize(d);
        se += (m - t) * (m - t);
        cov += (lo <= *t && *t <= hi) as u8 as f64;
    }
    let n = truth.len() as f64;
    ((se / n).sqrt(), cov / n)
}

/// Score a fit against the generating values.
pub fn score_fit(spec: &DesignSpec, mu: &[f64], s: &PosteriorSamples) -> Vec<(&'static str, f64, f64)> {
    let n = mu.len();
    let mu_draws: Vec<Vec<f64>> = (0..n).map(|i| s.field_at(Which::Mu, i)).collect();
    let one = |v: Vec<f64>, t: f64| score(&[t], &[v]);
    let (r_mu, c_mu) = score(mu, &mu_draws);
    let (r_g, c_g) = one(s.field_at(Which::Gamma, 0), spec.sigma.ln());
    let (r_x, c_x) = one(s.field_at(Which::Xi, 0), spec.xi);
    let (r_a, c_a) = one(s.alpha(), spec.alpha);
    let (r_t, c_t) = one(s.tau(), spec.tau);
    vec![("mu", r_mu, c_mu), ("gamma", r_g, c_g), ("xi", r_x, c_x), ("alpha", r_a, c_a), ("tau", r_t, c_t)]
}

fn replicate_seed(design: u8, seed: u64, r: usize) -> u64 {
    chain_seed(seed ^ ((design as u64) << 40), r)
}

/// Simulate replicate `r` and fit it with every grid of the design.
pub fn run_replicate(spec: &DesignSpec, opts: &StudyOptions, r: usize) -> Vec<ReplicateRow> {
    let seed = replicate_seed(spec.id, opts.seed, r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sim = spec.simulate(&mut rng);
    let mut rows = Vec::new();
    for (g, grid) in spec.fit_grids.iter().enumerate() {
        let row = |param, rmse, coverage, ok| ReplicateRow {
            design: spec.id,
            replicate: r,
            grid_m: grid.m().unwrap_or(0),
            spacing: grid.spacing().unwrap_or(f64::NAN),
            n_knots: grid.len(),
            param,
            rmse,
            coverage,
            ok,
        };
        let result = sim.as_ref().map_err(|e| e.to_string()).and_then(|(data, mu)| {
            fit(data, &spec.fit_spec(grid), &opts.fit_config(chain_seed(seed, 1000 + g)))
                .map(|s| score_fit(spec, mu, &s))
                .map_err(|e| e.to_string())
        });
        match result {
            Ok(scores) => rows.extend(scores.into_iter().map(|(p, r, c)| row(p, r, c, true))),
            Err(_) => rows.extend(PARAMS.iter().map(|p| row(p, f64::NAN, f64::NAN, false))),
        }
    }
    rows
}

/// All replicates of a design; rows ordered by replicate, grid, parameter.
pub fn run_design(spec: &DesignSpec, opts: &StudyOptions) -> Vec<ReplicateRow> {
    let mut per: Vec<(usize, Vec<ReplicateRow>)> =
        (0..opts.replicates).into_par_iter().map(|r| (r, run_replicate(spec, opts, r))).collect();
    per.sort_by_key(|(r, _)| *r);
    per.into_iter().flat_map(|(_, rows)| rows).collect()
}

/// Average RMSE and coverage per grid and parameter.
pub fn summarize_design(rows: &[ReplicateRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, &'static str)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.grid_m, r.param)) {
            keys.push((r.grid_m, r.param));
        }
    }
    keys.iter()
        .map(|&(m, p)| {
            let sel: Vec<&ReplicateRow> = rows.iter().filter(|r| r.grid_m == m && r.param == p).collect();
            let ok: Vec<&&ReplicateRow> = sel.iter().filter(|r| r.ok).collect();
            let k = ok.len() as f64;
            SummaryRow {
                design: sel[0].design,
                grid_m: m,
                spacing: sel[0].spacing,
                n_knots: sel[0].n_knots,
                param: p,
                mean_rmse: ok.iter().map(|r| r.rmse).sum::<f64>() / k,
                coverage: ok.iter().map(|r| r.coverage).sum::<f64>() / k,
                replicates: ok.len(),
                failed: sel.len() - ok.len(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn designs_match_their_definitions() {
        let d1 = DesignSpec::new(1).unwrap();
        assert_eq!((d1.gen_knots.len(), d1.alpha, d1.tau), (49, 0.3, 3.0));
        assert_eq!(d1.sites.len(), 49);
        let d5 = DesignSpec::new(5).unwrap();
        assert_eq!((d5.gen_knots.len(), d5.alpha, d5.tau), (10_000, 0.4, 1.0));
        let sizes: Vec<usize> = d5.fit_grids.iter().map(|g| g.len()).collect();
        assert_eq!(sizes, vec![25, 36, 49, 64, 81, 100, 121, 144]);
        assert!(DesignSpec::new(6).is_err());
        let d = DesignSpec::new(5).unwrap().with_grids(&[5, 9, 12]).unwrap();
        let sp: Vec<f64> = d.fit_grids.iter().map(|g| g.spacing().unwrap()).collect();
        assert_eq!(sp[1], 1.0);
        assert_eq!(sp[0], 2.0);
        assert!((sp[2] - 8.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert!((quantile(&v, 0.975) - 4.9).abs() < 1e-12);
    }

    #[test]
    fn simulation_is_seeded() {
        let d = DesignSpec::new(3).unwrap();
        let a = d.simulate(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = d.simulate(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.n_sites(), 49);
        assert_eq!(a.0.n_years(), 10);
    }
}
