//! Exploratory and post-fit summaries: madogram extremal coefficients,
//! return levels, posterior prediction and scenario comparison.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng;

use crate::basis::{KernelBasis, Point};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gevdist::{gev_quantile, gev_sample, GevParams};
use crate::gp::{matern_corr, CorrelationFactor};
use crate::mcmc::{FieldKind, PosteriorSamples, Which};
use crate::process::{conditional_params_ln, ln_theta_from_log_weights};

/// Madogram estimate for one site pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairEstimate {
    pub i: usize,
    pub j: usize,
    pub h: f64,
    pub theta_hat: f64,
    pub count: usize,
}

/// Pairwise extremal-coefficient estimates.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PairwiseExtremal {
    pub pairs: Vec<PairEstimate>,
}

/// Mid-ranks scaled to (0, 1): rank / (T + 1), ties get their average rank.
pub fn rank_transform(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = alloc::vec![0.0; n];
    let mut k = 0;
    while k < n {
        let mut e = k;
        while e + 1 < n && x[idx[e + 1]] == x[idx[k]] {
            e += 1;
        }
        let r = 0.5 * ((k + 1) + (e + 1)) as f64;
        for &i in &idx[k..=e] {
            out[i] = r / (n as f64 + 1.0);
        }
        k = e + 1;
    }
    out
}

/// F-madogram estimate ν̂ = (1/2T) Σ_t |F_i - F_j| turned into
/// ϑ̂ = (1 + 2ν̂) / (1 - 2ν̂), clamped to [1, 2].
pub fn madogram_pair(fi: &[f64], fj: &[f64]) -> f64 {
    let t = fi.len() as f64;
    let nu = fi.iter().zip(fj).map(|(a, b)| (a - b).abs()).sum::<f64>() / (2.0 * t);
    ((1.0 + 2.0 * nu) / (1.0 - 2.0 * nu)).clamp(1.0, 2.0)
}

/// Madogram estimates for every site pair i < j.
pub fn madogram(data: &Dataset) -> Result<PairwiseExtremal> {
    let t = data.n_years();
    if t < 2 {
        return Err(Error::Input("the madogram needs at least two years".into()));
    }
    let ranks: Vec<Vec<f64>> = (0..data.n_sites()).map(|i| rank_transform(data.series(i))).collect();
    let loc = data.locations();
    let mut pairs = Vec::new();
    for i in 0..data.n_sites() {
        for j in i + 1..data.n_sites() {
            pairs.push(PairEstimate {
                i,
                j,
                h: loc[i].dist(&loc[j]),
                theta_hat: madogram_pair(&ranks[i], &ranks[j]),
                count: t,
            });
        }
    }
    Ok(PairwiseExtremal { pairs })
}

/// The 1/(1 - q) return level: the q-quantile of the GEV.
pub fn return_level(p: &GevParams, q: f64) -> Result<f64> {
    gev_quantile(q, p)
}

/// Posterior-predictive draws at one new location, `draws × years`.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictive {
    pub n_years: usize,
    pub values: Vec<f64>,
    /// Marginal GEV parameters at the new location for each draw.
    pub params: Vec<GevParams>,
}

impl Predictive {
    pub fn draw(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_years..(k + 1) * self.n_years]
    }
}

struct Kriger {
    factors: BTreeMap<(u64, u64), CorrelationFactor>,
    sites: Vec<Point>,
}

impl Kriger {
    /// Conditional mean and variance of the field at `s` given site values.
    fn conditional(
        &mut self,
        s: Point,
        values: &[f64],
        mean_sites: &[f64],
        mean_new: f64,
        delta2: f64,
        rho: f64,
        nu: f64,
    ) -> Result<(f64, f64)> {
        if let Some(i) = self.sites.iter().position(|p| p.dist2(&s) == 0.0) {
            return Ok((values[i], 0.0));
        }
        let key = (rho.to_bits(), nu.to_bits());
        if !self.factors.contains_key(&key) {
            self.factors.insert(key, CorrelationFactor::new(&self.sites, rho, nu)?);
        }
        let f = &self.factors[&key];
        let k = DVector::from_iterator(self.sites.len(), self.sites.iter().map(|p| matern_corr(p.dist(&s), rho, nu)));
        let w = f.precision() * &k;
        let m = mean_new + w.iter().zip(values.iter().zip(mean_sites)).map(|(w, (v, m))| w * (v - m)).sum::<f64>();
        let v = delta2 * (1.0 - w.dot(&k)).max(0.0);
        Ok((m, v))
    }
}

/// Posterior-predictive draws of all years at `s_new`.
///
/// For each retained draw the GEV fields at `s_new` are drawn from their
/// conditional GP given the sampled site values, θ(s_new) follows from the
/// stored random effects, and one GEV value is drawn per year.
pub fn posterior_predict<R: Rng + ?Sized>(
    samples: &PosteriorSamples,
    s_new: Point,
    covariates: &[f64],
    rng: &mut R,
) -> Result<Predictive> {
    let t_n = samples.n_years();
    let l = samples.knots.len();
    let mut kr = Kriger { factors: BTreeMap::new(), sites: samples.locations() };
    let mut values = Vec::with_capacity(samples.n_draws() * t_n);
    let mut params = Vec::with_capacity(samples.n_draws());
    let mut lw = Vec::with_capacity(l);
    for d in &samples.draws {
        let mut p = [0.0; 3];
        for w in Which::ALL {
            let field = d.field(w);
            p[w.index()] = match (samples.fields[w.index()], &d.hyper[w.index()]) {
                (FieldKind::Constant, _) | (_, None) => field[0],
                (FieldKind::Spatial { .. }, Some(h)) => {
                    let row = samples.design_row(w, covariates);
                    if row.len() != h.beta.len() {
                        return Err(Error::Input("covariate count does not match the fitted mean".into()));
                    }
                    let mean_new: f64 = row.iter().zip(&h.beta).map(|(x, b)| x * b).sum();
                    let mean_sites: Vec<f64> = samples
                        .sites
                        .iter()
                        .map(|s| samples.design_row(w, &s.covariates).iter().zip(&h.beta).map(|(x, b)| x * b).sum())
                        .collect();
                    let (m, v) = kr.conditional(s_new, field, &mean_sites, mean_new, h.delta2, h.rho, h.nu)?;
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    m + v.sqrt() * z
                }
            };
        }
        let gp = GevParams { mu: p[0], sigma: p[1].exp(), xi: p[2] };
        let alpha = d.alpha;
        KernelBasis::new(samples.knots.clone(), d.tau)?.log_weights_into(s_new, &mut lw)?;
        for t in 0..t_n {
            let ln_theta =
                if alpha == 1.0 && samples.alpha_fixed == Some(1.0) { 0.0 } else { ln_theta_from_log_weights(d.effects(t, l), &lw, alpha) };
            let cp = conditional_params_ln(&gp, ln_theta, alpha);
            values.push(gev_sample(rng, &cp)?);
        }
        params.push(gp);
    }
    Ok(Predictive { n_years: t_n, values, params })
}

/// Posterior summary of one quantity in both runs and of its change.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChangeSummary {
    pub hist_mean: f64,
    pub hist_sd: f64,
    pub fut_mean: f64,
    pub fut_sd: f64,
    pub change_mean: f64,
    pub change_sd: f64,
    /// P(change > 0) with ties counted as one half.
    pub p_increase: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

impl ChangeSummary {
    fn from_pairs(hist: &[f64], fut: &[f64]) -> Self {
        let change: Vec<f64> = fut.iter().zip(hist).map(|(f, h)| f - h).collect();
        let (hm, hv) = mean_var(hist);
        let (fm, fv) = mean_var(fut);
        let (cm, cv) = mean_var(&change);
        let up = change.iter().filter(|&&c| c > 0.0).count() as f64;
        let tie = change.iter().filter(|&&c| c == 0.0).count() as f64;
        ChangeSummary {
            hist_mean: hm,
            hist_sd: hv.sqrt(),
            fut_mean: fm,
            fut_sd: fv.sqrt(),
            change_mean: cm,
            change_sd: cv.sqrt(),
            p_increase: (up + 0.5 * tie) / change.len() as f64,
        }
    }
}

/// Changes at one site.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteChange {
    pub site_id: String,
    /// μ, σ and ξ.
    pub params: [ChangeSummary; 3],
    /// One entry per requested quantile level.
    pub quantiles: Vec<ChangeSummary>,
}

/// Per-site comparison of two fits over the same sites.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSummary {
    pub q_list: Vec<f64>,
    pub sites: Vec<SiteChange>,
}

fn marginal(d: &crate::mcmc::Draw, i: usize) -> GevParams {
    d.params_at(i)
}

/// Compare future against historical posteriors by pairing draw k of one run
/// with draw k of the other.
pub fn compare_scenarios(hist: &PosteriorSamples, fut: &PosteriorSamples, q_list: &[f64]) -> Result<ScenarioSummary> {
    if !hist.same_sites(fut) {
        return Err(Error::Input("the two runs cover different sites".into()));
    }
    let k = hist.n_draws().min(fut.n_draws());
    if k == 0 {
        return Err(Error::Input("no posterior draws".into()));
    }
    if let Some(&q) = q_list.iter().find(|&&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::Domain { name: "q", value: q });
    }
    let mut sites = Vec::with_capacity(hist.n_sites());
    for (i, s) in hist.sites.iter().enumerate() {
        let ph: Vec<GevParams> = hist.draws[..k].iter().map(|d| marginal(d, i)).collect();
        let pf: Vec<GevParams> = fut.draws[..k].iter().map(|d| marginal(d, i)).collect();
        let pick = |v: &[GevParams], f: fn(&GevParams) -> f64| -> Vec<f64> { v.iter().map(f).collect() };
        let params = [
            ChangeSummary::from_pairs(&pick(&ph, |p| p.mu), &pick(&pf, |p| p.mu)),
            ChangeSummary::from_pairs(&pick(&ph, |p| p.sigma), &pick(&pf, |p| p.sigma)),
            ChangeSummary::from_pairs(&pick(&ph, |p| p.xi), &pick(&pf, |p| p.xi)),
        ];
        let mut quantiles = Vec::with_capacity(q_list.len());
        for &q in q_list {
            let qh: Result<Vec<f64>> = ph.iter().map(|p| gev_quantile(q, p)).collect();
            let qf: Result<Vec<f64>> = pf.iter().map(|p| gev_quantile(q, p)).collect();
            quantiles.push(ChangeSummary::from_pairs(&qh?, &qf?));
        }
        sites.push(SiteChange { site_id: s.id.clone(), params, quantiles });
    }
    Ok(ScenarioSummary { q_list: q_list.to_vec(), sites })
}

/// Per site, Var_full / Var_indep of the posterior draws of μ, σ and ξ.
/// Two degenerate (zero-variance) posteriors give a ratio of one.
pub fn variance_ratio(full: &PosteriorSamples, indep: &PosteriorSamples) -> Result<Vec<[f64; 3]>> {
    if !full.same_sites(indep) {
        return Err(Error::Input("the two runs cover different sites".into()));
    }
    if full.n_draws() < 2 || indep.n_draws() < 2 {
        return Err(Error::Input("variance ratios need at least two draws per run".into()));
    }
    let var = |s: &PosteriorSamples, i: usize, k: usize| -> f64 {
        let v: Vec<f64> = s
            .draws
            .iter()
            .map(|d| {
                let p = d.params_at(i);
                [p.mu, p.sigma, p.xi][k]
            })
            .collect();
        mean_var(&v).1
    };
    let mut out = Vec::with_capacity(full.n_sites());
    for i in 0..full.n_sites() {
        let mut r = [0.0; 3];
        for (k, slot) in r.iter_mut().enumerate() {
            let (a, b) = (var(full, i, k), var(indep, i, k));
            *slot = if a == b {
                1.0
            } else if b > 0.0 {
                a / b
            } else {
                return Err(Error::Numerical("independence-model posterior has zero variance"));
            };
        }
        out.push(r);
    }
    Ok(out)
}
