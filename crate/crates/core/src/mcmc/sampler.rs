use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;

use super::samples::{ChainDiagnostics, Draw, FieldKind, HyperDraw, PosteriorSamples};
use super::{
    adapt_step, AcceptCount, Block, FieldSpec, FitConfig, InvGamma, ModelSpec, Smoothness, Which, N_BLOCKS,
};
use crate::basis::{KernelBasis, KnotGrid, Point};
use crate::dataset::{Dataset, Site};
use crate::error::{Error, Result};
use crate::gevdist::{self, GevParams, GUMBEL_TOL};
use crate::gp::{gibbs_beta, spike_slab_update, CorrelationFactor, GpHyper, SpikeSlabState};
use crate::process::{conditional_params_ln, SpatialGevFields};
use crate::special::inv_gamma_ln_pdf;
use crate::stable;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const AUDIT_TOL: f64 = 1e-10;
// Relative size of a cancelled term above which a cached kernel sum is
// recomputed from scratch.
const CANCEL_LIMIT: f64 = 1e4;

/// GP prior state of a spatially varying field.
#[derive(Clone, Debug)]
pub struct GpField {
    pub hyper: GpHyper,
    pub factor: CorrelationFactor,
    pub spike: Option<SpikeSlabState>,
    pub nu_free: bool,
    design: DMatrix<f64>,
    mean: Vec<f64>,
}

impl GpField {
    fn refresh_mean(&mut self) {
        let b = DVector::from_column_slice(&self.hyper.beta);
        self.mean = (&self.design * b).iter().copied().collect();
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    fn residuals(&self, values: &[f64]) -> Vec<f64> {
        values.iter().zip(&self.mean).map(|(v, m)| v - m).collect()
    }
}

/// Prior state of one GEV field.
#[derive(Clone, Debug)]
pub enum FieldState {
    Constant { prior_mean: f64, prior_sd: f64 },
    Spatial(GpField),
}

/// Full sampler state.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub fields: SpatialGevFields,
    pub priors: [FieldState; 3],
    pub alpha: f64,
    /// δ = log τ.
    pub log_tau: f64,
    /// A_lt, row-major `years × knots`.
    pub aux_a: Vec<f64>,
    /// B_lt, row-major `years × knots`.
    pub aux_b: Vec<f64>,
    pub steps: [f64; N_BLOCKS],
}

impl ModelState {
    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn field(&self, w: Which) -> &[f64] {
        match w {
            Which::Mu => &self.fields.mu,
            Which::Gamma => &self.fields.gamma,
            Which::Xi => &self.fields.xi,
        }
    }

    fn field_mut(&mut self, w: Which) -> &mut Vec<f64> {
        match w {
            Which::Mu => &mut self.fields.mu,
            Which::Gamma => &mut self.fields.gamma,
            Which::Xi => &mut self.fields.xi,
        }
    }

    fn params_with(&self, i: usize, w: Which, v: f64) -> GevParams {
        let mut p = self.fields.params_at(i);
        match w {
            Which::Mu => p.mu = v,
            Which::Gamma => p.sigma = v.exp(),
            Which::Xi => p.xi = v,
        }
        p
    }
}

struct Ctx {
    y: Vec<f64>,
    n: usize,
    t: usize,
    l: usize,
    sites: Vec<Point>,
    site_info: Vec<Site>,
    years: Vec<i64>,
    knots: KnotGrid,
    prior_only: bool,
    independent: bool,
    alpha_fixed: Option<f64>,
}

impl Ctx {
    #[inline]
    fn term(&self, y: f64, p: &GevParams, ln_theta: f64, alpha: f64) -> f64 {
        if self.prior_only {
            return 0.0;
        }
        ll_term(y, p, ln_theta, alpha)
    }
}

#[inline]
fn ll_term(y: f64, p: &GevParams, ln_theta: f64, alpha: f64) -> f64 {
    let cp = conditional_params_ln(p, ln_theta, alpha);
    if !(cp.sigma > 0.0) || !cp.sigma.is_finite() || !cp.mu.is_finite() {
        return f64::NEG_INFINITY;
    }
    gevdist::logpdf_unchecked(y, &cp)
}

/// Cached kernel sums and log-density terms; site-major `n × T` unless noted.
#[derive(Clone, Debug)]
struct Caches {
    lw_max: Vec<f64>,
    /// exp((log w - max) / α), n × L
    wt: Vec<f64>,
    ssum: Vec<f64>,
    ln_theta: Vec<f64>,
    ll: Vec<f64>,
}

impl Caches {
    fn build(ctx: &Ctx, fields: &SpatialGevFields, alpha: f64, tau: f64, aux_a: &[f64]) -> Result<Caches> {
        let (n, t_n, l) = (ctx.n, ctx.t, ctx.l);
        let basis = KernelBasis::new(ctx.knots.clone(), tau)?;
        let lw = basis.log_weight_matrix(&ctx.sites)?;
        let mut lw_max = Vec::with_capacity(n);
        let mut wt = Vec::with_capacity(n * l);
        for i in 0..n {
            let row = &lw[i * l..(i + 1) * l];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            lw_max.push(m);
            wt.extend(row.iter().map(|x| ((x - m) / alpha).exp()));
        }
        let mut c = Caches {
            lw_max,
            wt,
            ssum: alloc::vec![0.0; n * t_n],
            ln_theta: alloc::vec![0.0; n * t_n],
            ll: alloc::vec![0.0; n * t_n],
        };
        for i in 0..n {
            let p = fields.params_at(i);
            for t in 0..t_n {
                let s = c.exact_sum(i, t, l, aux_a);
                let k = i * t_n + t;
                c.ssum[k] = s;
                c.ln_theta[k] = if ctx.independent { 0.0 } else { c.lw_max[i] + alpha * s.ln() };
                c.ll[k] = ctx.term(ctx.y[k], &p, c.ln_theta[k], alpha);
            }
        }
        Ok(c)
    }

    #[inline]
    fn exact_sum(&self, i: usize, t: usize, l: usize, aux_a: &[f64]) -> f64 {
        let w = &self.wt[i * l..(i + 1) * l];
        let a = &aux_a[t * l..(t + 1) * l];
        w.iter().zip(a).map(|(w, a)| w * a).sum()
    }

    fn total(&self) -> f64 {
        self.ll.iter().sum()
    }
}

/// Σ_t Σ_i log f(Y_t(s_i) | θ_t(s_i)) for a given state. Terms within a site
/// are summed in sorted order, so the value does not depend on year order.
pub fn log_likelihood(state: &ModelState, data: &Dataset, knots: &KnotGrid) -> Result<f64> {
    let l = knots.len();
    if state.aux_a.len() != l * data.n_years() {
        return Err(Error::Input("random effects do not match knots × years".into()));
    }
    let basis = KernelBasis::new(knots.clone(), state.tau())?;
    let mut total = 0.0;
    let mut terms = Vec::with_capacity(data.n_years());
    for (i, site) in data.sites.iter().enumerate() {
        let lw = basis.log_weights(site.location)?;
        let p = state.fields.params_at(i);
        terms.clear();
        for t in 0..data.n_years() {
            let a = &state.aux_a[t * l..(t + 1) * l];
            let ln_theta = crate::process::ln_theta_from_log_weights(a, &lw, state.alpha);
            terms.push(ll_term(data.value(i, t), &p, ln_theta, state.alpha));
        }
        terms.sort_by(|a, b| a.total_cmp(b));
        total += terms.iter().sum::<f64>();
    }
    Ok(total)
}

/// Running moments of (α, μ, γ and ξ levels, log τ) gathered during burn-in.
/// Their regression slopes on α give the direction of the ridge move.
#[derive(Clone, Debug, Default)]
struct RidgeMoments {
    n: f64,
    mean: [f64; RIDGE_DIM],
    cross: [f64; RIDGE_DIM],
}

const RIDGE_DIM: usize = 5;

// Burn-in sweeps collected before the ridge move starts.
const RIDGE_MIN_SWEEPS: f64 = 200.0;

impl RidgeMoments {
    fn push(&mut self, x: [f64; RIDGE_DIM]) {
        self.n += 1.0;
        let dx: [f64; RIDGE_DIM] = core::array::from_fn(|k| x[k] - self.mean[k]);
        for k in 0..RIDGE_DIM {
            self.mean[k] += dx[k] / self.n;
        }
        let da = x[0] - self.mean[0];
        for k in 0..RIDGE_DIM {
            self.cross[k] += dx[k] * da;
        }
    }

    fn slopes(&self) -> Option<[f64; RIDGE_DIM - 1]> {
        if self.n < RIDGE_MIN_SWEEPS || !(self.cross[0] > 0.0) {
            return None;
        }
        let b: [f64; RIDGE_DIM - 1] = core::array::from_fn(|k| self.cross[k + 1] / self.cross[0]);
        b.iter().all(|x| x.is_finite()).then_some(b)
    }
}

#[derive(Clone, Debug)]
struct RidgeCandidate {
    fields: SpatialGevFields,
    alpha: f64,
    log_tau: f64,
    shift: [f64; 3],
    aux_a: Vec<f64>,
}

/// One MCMC chain over a fixed dataset and model.
pub struct Sampler<R: Rng> {
    ctx: Ctx,
    spec: ModelSpec,
    config: FitConfig,
    state: ModelState,
    caches: Caches,
    rng: R,
    window: [AcceptCount; N_BLOCKS],
    totals: [AcceptCount; N_BLOCKS],
    nan_rejections: u64,
    audits: usize,
    audit_failures: usize,
    max_audit_error: f64,
    initial_log_lik: f64,
    scratch: Vec<f64>,
    scratch_aux: Vec<(usize, f64, f64, f64)>,
    pending: Option<Caches>,
    ridge: RidgeMoments,
    pending_ridge: Option<RidgeCandidate>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}

fn design_matrix(sites: &[Site], use_covariates: bool) -> DMatrix<f64> {
    let p = if use_covariates { 1 + sites[0].covariates.len() } else { 1 };
    DMatrix::from_fn(sites.len(), p, |i, k| if k == 0 { 1.0 } else { sites[i].covariates[k - 1] })
}

impl<R: Rng> Sampler<R> {
    pub fn new(data: &Dataset, spec: &ModelSpec, config: &FitConfig, rng: R) -> Result<Self> {
        data.validate()?;
        spec.validate()?;
        config.validate()?;
        let (n, t_n, l) = (data.n_sites(), data.n_years(), spec.knots.len());
        let ctx = Ctx {
            y: data.values().to_vec(),
            n,
            t: t_n,
            l,
            sites: data.locations(),
            site_info: data.sites.clone(),
            years: data.years.clone(),
            knots: spec.knots.clone(),
            prior_only: config.prior_only,
            independent: spec.alpha_fixed == Some(1.0),
            alpha_fixed: spec.alpha_fixed,
        };

        // method-of-moments Gumbel fits per site
        let pooled_sd = mean_sd(data.values()).1;
        let mut mu0 = Vec::with_capacity(n);
        let mut sigma0 = Vec::with_capacity(n);
        for i in 0..n {
            let (m, sd) = mean_sd(data.series(i));
            let sd = if sd > 0.0 { sd } else if pooled_sd > 0.0 { pooled_sd } else { 1.0 };
            let s = sd * 6f64.sqrt() / core::f64::consts::PI;
            sigma0.push(s);
            mu0.push(m - EULER_GAMMA * s);
        }
        let site_dists: Vec<f64> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| ctx.sites[i].dist(&ctx.sites[j]))
            .collect();
        let rho0 = median(site_dists).filter(|d| *d > 0.0).unwrap_or(1.0);

        let alpha = spec.alpha_fixed.unwrap_or(0.5);
        let tau = spec.knots.spacing().unwrap_or(rho0);
        let mut last_err = String::new();
        for xi0 in [0.1, 0.0] {
            let init = [mu0.clone(), sigma0.iter().map(|s| s.ln()).collect::<Vec<_>>(), alloc::vec![xi0; n]];
            let mut values: [Vec<f64>; 3] = Default::default();
            let mut priors = Vec::with_capacity(3);
            for w in Which::ALL {
                let v = &init[w.index()];
                match spec.field(w) {
                    FieldSpec::Constant { prior_mean, prior_sd } => {
                        let m = v.iter().sum::<f64>() / n as f64;
                        values[w.index()] = alloc::vec![m; n];
                        priors.push(FieldState::Constant { prior_mean: *prior_mean, prior_sd: *prior_sd });
                    }
                    FieldSpec::Spatial { nu, spike_slab, use_covariates } => {
                        let design = design_matrix(&data.sites, *use_covariates);
                        let vv = DVector::from_column_slice(v);
                        let beta = design
                            .clone()
                            .svd(true, true)
                            .solve(&vv, 1e-12)
                            .map_err(|_| Error::Numerical("least-squares initialization of beta"))?;
                        let fitted = &design * &beta;
                        let resid: Vec<f64> = vv.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
                        let var = resid.iter().map(|r| r * r).sum::<f64>() / n as f64;
                        let delta2 = var.max(1e-2);
                        let nu0 = match nu {
                            Smoothness::Fixed(x) => *x,
                            Smoothness::Free => 0.5,
                        };
                        let factor = CorrelationFactor::new(&ctx.sites, rho0, nu0)?;
                        let mut f = GpField {
                            hyper: GpHyper { beta: beta.iter().copied().collect(), delta2, rho: rho0, nu: nu0 },
                            factor,
                            spike: spike_slab.then(|| SpikeSlabState::new(true, delta2)),
                            nu_free: matches!(nu, Smoothness::Free),
                            design,
                            mean: Vec::new(),
                        };
                        f.refresh_mean();
                        values[w.index()] = v.clone();
                        priors.push(FieldState::Spatial(f));
                    }
                }
            }
            let [mu, gamma, xi] = values;
            let fields = SpatialGevFields::new(mu, gamma, xi)?;
            let aux_a = alloc::vec![1.0; l * t_n];
            let aux_b = alloc::vec![0.5; l * t_n];
            let caches = Caches::build(&ctx, &fields, alpha, tau, &aux_a)?;
            let ll = caches.total();
            if !ll.is_finite() {
                let bad = caches.ll.iter().filter(|x| !x.is_finite()).count();
                let first = caches.ll.iter().position(|x| !x.is_finite()).unwrap_or(0);
                last_err = alloc::format!(
                    "initial log-likelihood is {ll} with xi = {xi0}: {bad} non-finite terms, first at site {} year {}",
                    ctx.site_info[first / t_n].id,
                    ctx.years[first % t_n]
                );
                continue;
            }
            let s_scale = sigma0.iter().sum::<f64>() / n as f64;
            let mut steps = [0.3; N_BLOCKS];
            let nt = (n * t_n) as f64;
            for w in Which::ALL {
                let scale = if w == Which::Mu { s_scale } else { 0.8 };
                let obs = match spec.field(w) {
                    FieldSpec::Constant { .. } => nt,
                    FieldSpec::Spatial { .. } => 4.0 * t_n as f64,
                };
                steps[Block::Field(w).index()] = 2.4 * scale / obs.sqrt();
                steps[Block::LogDelta2(w).index()] = 0.5;
            }
            steps[Block::LogTau.index()] = 0.1;
            steps[Block::Alpha.index()] = 0.005;
            steps[Block::AuxA.index()] = 1.0;
            steps[Block::AuxB.index()] = 0.3;
            steps[Block::Ridge.index()] = 0.02;
            steps[Block::EffectScale.index()] = 0.1;
            let priors: [FieldState; 3] = priors.try_into().map_err(|_| Error::Contract("three fields"))?;
            let state = ModelState { fields, priors, alpha, log_tau: tau.ln(), aux_a, aux_b, steps };
            return Ok(Sampler {
                ctx,
                spec: spec.clone(),
                config: config.clone(),
                state,
                caches,
                rng,
                window: Default::default(),
                totals: Default::default(),
                nan_rejections: 0,
                audits: 0,
                audit_failures: 0,
                max_audit_error: 0.0,
                initial_log_lik: ll,
                scratch: Vec::new(),
                scratch_aux: Vec::new(),
                pending: None,
                ridge: RidgeMoments::default(),
                pending_ridge: None,
            });
        }
        Err(Error::Initialization(last_err))
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut ModelState {
        &mut self.state
    }

    /// Cached log-likelihood (sum of cached terms).
    pub fn cached_log_likelihood(&self) -> f64 {
        self.caches.total()
    }

    /// Rebuild all caches from the state, e.g. after editing it directly.
    pub fn refresh(&mut self) -> Result<()> {
        self.caches = self.fresh_caches()?;
        Ok(())
    }

    fn fresh_caches(&self) -> Result<Caches> {
        Caches::build(&self.ctx, &self.state.fields, self.state.alpha, self.state.tau(), &self.state.aux_a)
    }

    pub fn rng(&mut self) -> &mut R {
        &mut self.rng
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Accept with probability min(1, exp(log_r)); NaN is rejected.
    fn decide(&mut self, block: Block, log_r: f64, burn_in: bool) -> bool {
        let ok = if log_r.is_nan() {
            self.nan_rejections += 1;
            false
        } else {
            let u: f64 = self.rng.sample(Open01);
            u.ln() < log_r
        };
        if burn_in {
            self.window[block.index()].record(ok);
        } else {
            self.totals[block.index()].record(ok);
        }
        ok
    }

    // ---- GEV fields ----

    fn eval_site(&mut self, w: Which, i: usize, cand: f64) -> f64 {
        let p = self.state.params_with(i, w, cand);
        let t_n = self.ctx.t;
        self.scratch.clear();
        let mut delta = 0.0;
        for t in 0..t_n {
            let k = i * t_n + t;
            let new = self.ctx.term(self.ctx.y[k], &p, self.caches.ln_theta[k], self.state.alpha);
            delta += new - self.caches.ll[k];
            self.scratch.push(new);
        }
        delta
    }

    /// log R for moving field `w` at site `i` to `cand` (spatial fields).
    pub fn log_ratio_field_site(&mut self, w: Which, i: usize, cand: f64) -> f64 {
        let cur = self.state.field(w)[i];
        let ll = self.eval_site(w, i, cand);
        let prior = match &self.state.priors[w.index()] {
            FieldState::Spatial(g) => {
                let d2 = g.hyper.delta2;
                let (m, v) = g.factor.conditional(i, self.state.field(w), g.mean(), d2);
                -((cand - m).powi(2) - (cur - m).powi(2)) / (2.0 * v)
            }
            FieldState::Constant { .. } => 0.0,
        };
        ll + prior
    }

    /// Random-walk update of field `w` at site `i`.
    pub fn update_field_site(&mut self, w: Which, i: usize, burn_in: bool) -> bool {
        let cur = self.state.field(w)[i];
        let cand = cur + self.state.steps[Block::Field(w).index()] * self.normal();
        let log_r = self.log_ratio_field_site(w, i, cand);
        let ok = self.decide(Block::Field(w), log_r, burn_in);
        if ok {
            self.state.field_mut(w)[i] = cand;
            let t_n = self.ctx.t;
            self.caches.ll[i * t_n..(i + 1) * t_n].copy_from_slice(&self.scratch);
        }
        ok
    }

    fn eval_constant(&mut self, w: Which, cand: f64) -> f64 {
        let (n, t_n) = (self.ctx.n, self.ctx.t);
        self.scratch.clear();
        let mut delta = 0.0;
        for i in 0..n {
            let p = self.state.params_with(i, w, cand);
            for t in 0..t_n {
                let k = i * t_n + t;
                let new = self.ctx.term(self.ctx.y[k], &p, self.caches.ln_theta[k], self.state.alpha);
                delta += new - self.caches.ll[k];
                self.scratch.push(new);
            }
        }
        delta
    }

    /// log R for moving a spatially constant field to `cand` at every site.
    pub fn log_ratio_constant(&mut self, w: Which, cand: f64) -> f64 {
        let cur = self.state.field(w)[0];
        let ll = self.eval_constant(w, cand);
        let prior = match self.state.priors[w.index()] {
            FieldState::Constant { prior_mean, prior_sd } => {
                -((cand - prior_mean).powi(2) - (cur - prior_mean).powi(2)) / (2.0 * prior_sd * prior_sd)
            }
            FieldState::Spatial(_) => 0.0,
        };
        ll + prior
    }

    pub fn update_constant(&mut self, w: Which, burn_in: bool) -> bool {
        let cur = self.state.field(w)[0];
        let cand = cur + self.state.steps[Block::Field(w).index()] * self.normal();
        let log_r = self.log_ratio_constant(w, cand);
        let ok = self.decide(Block::Field(w), log_r, burn_in);
        if ok {
            for v in self.state.field_mut(w).iter_mut() {
                *v = cand;
            }
            self.caches.ll.copy_from_slice(&self.scratch);
        }
        ok
    }

    // ---- GP hyperparameters ----

    fn update_hyper(&mut self, w: Which, burn_in: bool) -> Result<()> {
        let priors = self.config.priors;
        let sites = &self.ctx.sites;
        let values = match w {
            Which::Mu => &self.state.fields.mu,
            Which::Gamma => &self.state.fields.gamma,
            Which::Xi => &self.state.fields.xi,
        };
        let FieldState::Spatial(g) = &mut self.state.priors[w.index()] else {
            return Ok(());
        };
        let steps = &self.state.steps;
        let rng = &mut self.rng;

        let beta = gibbs_beta(rng, &g.design, values, &g.factor, g.hyper.delta2, priors.beta_sd)?;
        g.hyper.beta = beta;
        g.refresh_mean();
        let resid = g.residuals(values);

        let mut outcomes: [(Block, f64, Option<CorrelationFactor>, f64); 3] = [
            (Block::LogDelta2(w), f64::NAN, None, 0.0),
            (Block::LogRho(w), f64::NAN, None, 0.0),
            (Block::LogNu(w), f64::NAN, None, 0.0),
        ];
        let mut decisions = [false; 3];

        // variance (random walk on log δ² unless the spike-slab switch owns it)
        if g.spike.is_none() {
            let d2 = g.hyper.delta2;
            let z: f64 = rng.sample(StandardNormal);
            let cand = d2 * (steps[Block::LogDelta2(w).index()] * z).exp();
            let log_r = g.factor.log_density(&resid, cand) - g.factor.log_density(&resid, d2)
                + log_prior_log(cand, priors.delta2)
                - log_prior_log(d2, priors.delta2);
            outcomes[0].1 = log_r;
            outcomes[0].3 = cand;
            decisions[0] = accept(rng, log_r);
            if decisions[0] {
                g.hyper.delta2 = cand;
            }
        }

        // range
        {
            let rho = g.hyper.rho;
            let z: f64 = rng.sample(StandardNormal);
            let cand = rho * (steps[Block::LogRho(w).index()] * z).exp();
            let (log_r, f) = match CorrelationFactor::new(sites, cand, g.hyper.nu) {
                Ok(f) => {
                    let r = f.log_density(&resid, g.hyper.delta2) - g.factor.log_density(&resid, g.hyper.delta2)
                        + log_prior_log(cand, priors.rho)
                        - log_prior_log(rho, priors.rho);
                    (r, Some(f))
                }
                Err(_) => (f64::NEG_INFINITY, None),
            };
            outcomes[1].1 = log_r;
            decisions[1] = accept(rng, log_r);
            if decisions[1] {
                g.hyper.rho = cand;
                g.factor = f.expect("factor of accepted proposal");
            }
        }

        // smoothness
        if g.nu_free {
            let nu = g.hyper.nu;
            let z: f64 = rng.sample(StandardNormal);
            let cand = nu * (steps[Block::LogNu(w).index()] * z).exp();
            let (log_r, f) = match CorrelationFactor::new(sites, g.hyper.rho, cand) {
                Ok(f) => {
                    let r = f.log_density(&resid, g.hyper.delta2) - g.factor.log_density(&resid, g.hyper.delta2)
                        + log_prior_log(cand, priors.nu)
                        - log_prior_log(nu, priors.nu);
                    (r, Some(f))
                }
                Err(_) => (f64::NEG_INFINITY, None),
            };
            outcomes[2].1 = log_r;
            decisions[2] = accept(rng, log_r);
            if decisions[2] {
                g.hyper.nu = cand;
                g.factor = f.expect("factor of accepted proposal");
            }
        }

        for (k, (block, log_r, _, _)) in outcomes.iter().enumerate() {
            if k == 0 && g.spike.is_some() || k == 2 && !g.nu_free {
                continue;
            }
            if log_r.is_nan() {
                self.nan_rejections += 1;
            }
            let c = if burn_in { &mut self.window } else { &mut self.totals };
            c[block.index()].record(decisions[k]);
        }
        Ok(())
    }

    fn update_spike(&mut self, w: Which) {
        let prior = self.config.priors.spike;
        let values = match w {
            Which::Mu => &self.state.fields.mu,
            Which::Gamma => &self.state.fields.gamma,
            Which::Xi => &self.state.fields.xi,
        };
        let FieldState::Spatial(g) = &mut self.state.priors[w.index()] else {
            return;
        };
        let Some(s) = g.spike else {
            return;
        };
        let resid = g.residuals(values);
        let next = spike_slab_update(&mut self.rng, &s, &resid, &g.factor, &prior);
        g.hyper.delta2 = next.effective_delta2();
        g.spike = Some(next);
    }

    // ---- bandwidth and α ----

    /// log R for moving δ = log τ to `cand`.
    pub fn log_ratio_log_tau(&mut self, cand: f64) -> f64 {
        let cur = self.state.log_tau;
        let prior = log_prior_log(cand.exp(), self.config.priors.tau) - log_prior_log(cur.exp(), self.config.priors.tau);
        if !cand.exp().is_finite() {
            self.pending = None;
            return f64::NEG_INFINITY;
        }
        match Caches::build(&self.ctx, &self.state.fields, self.state.alpha, cand.exp(), &self.state.aux_a) {
            Ok(c) => {
                let r = c.total() - self.caches.total() + prior;
                self.pending = Some(c);
                r
            }
            Err(_) => {
                self.pending = None;
                f64::NEG_INFINITY
            }
        }
    }

    pub fn update_log_tau(&mut self, burn_in: bool) -> bool {
        let cand = self.state.log_tau + self.state.steps[Block::LogTau.index()] * self.normal();
        let log_r = self.log_ratio_log_tau(cand);
        let ok = self.decide(Block::LogTau, log_r, burn_in);
        if ok {
            self.state.log_tau = cand;
            self.caches = self.pending.take().expect("caches of accepted proposal");
        }
        self.pending = None;
        ok
    }

    fn aux_log_density(&self, alpha: f64) -> f64 {
        self.state
            .aux_a
            .iter()
            .zip(&self.state.aux_b)
            .map(|(&a, &b)| stable::joint_logpdf_unchecked(a, b, alpha))
            .sum()
    }

    /// log R for moving α to `cand`; zero prior mass outside (0, 1).
    pub fn log_ratio_alpha(&mut self, cand: f64) -> f64 {
        self.pending = None;
        if !(cand > 0.0 && cand < 1.0) {
            return f64::NEG_INFINITY;
        }
        let aux = self.aux_log_density(cand) - self.aux_log_density(self.state.alpha);
        match Caches::build(&self.ctx, &self.state.fields, cand, self.state.tau(), &self.state.aux_a) {
            Ok(c) => {
                let r = c.total() - self.caches.total() + aux;
                self.pending = Some(c);
                r
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    pub fn update_alpha(&mut self, burn_in: bool) -> bool {
        let cand = self.state.alpha + self.state.steps[Block::Alpha.index()] * self.normal();
        let log_r = self.log_ratio_alpha(cand);
        let ok = self.decide(Block::Alpha, log_r, burn_in);
        if ok {
            self.state.alpha = cand;
            self.caches = self.pending.take().expect("caches of accepted proposal");
        }
        self.pending = None;
        ok
    }

    // ---- joint move along the α ridge ----

    fn level(&self, w: Which) -> f64 {
        let v = self.state.field(w);
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn ridge_point(&self) -> [f64; RIDGE_DIM] {
        [self.state.alpha, self.level(Which::Mu), self.level(Which::Gamma), self.level(Which::Xi), self.state.log_tau]
    }

    /// Slopes of the μ, γ and ξ levels and log τ on α, once enough burn-in
    /// sweeps have been seen; fixed after burn-in.
    pub fn ridge_slopes(&self) -> Option<[f64; RIDGE_DIM - 1]> {
        self.ridge.slopes()
    }

    /// Change in log prior from adding `sh` to every value of field `w`; a
    /// spatial field moves its intercept along, leaving GP residuals alone.
    fn level_prior_shift(&self, w: Which, sh: f64) -> f64 {
        match &self.state.priors[w.index()] {
            FieldState::Constant { prior_mean, prior_sd } => {
                let c = self.state.field(w)[0] - prior_mean;
                -((c + sh).powi(2) - c * c) / (2.0 * prior_sd * prior_sd)
            }
            FieldState::Spatial(g) => {
                let b0 = g.hyper.beta[0];
                let sd = self.config.priors.beta_sd;
                -((b0 + sh).powi(2) - b0 * b0) / (2.0 * sd * sd)
            }
        }
    }

    fn shift_intercept(&mut self, w: Which, sh: f64) {
        if let FieldState::Spatial(g) = &mut self.state.priors[w.index()] {
            g.hyper.beta[0] += sh;
            g.refresh_mean();
        }
    }

    /// log R for moving α by `d`, the μ, γ and ξ levels and log τ by
    /// `slope · d`, and every A_lt to A_lt^(α/(α+d)). Spatial fields shift
    /// their intercept with the values, so GP residuals are unchanged. The A
    /// map contributes its Jacobian (α/α')·A'/A per effect.
    pub fn log_ratio_ridge(&mut self, d: f64, slope: [f64; RIDGE_DIM - 1]) -> f64 {
        self.pending = None;
        self.pending_ridge = None;
        let alpha = self.state.alpha + d;
        if !(alpha > 0.0 && alpha < 1.0) {
            return f64::NEG_INFINITY;
        }
        let log_tau = self.state.log_tau + slope[3] * d;
        let tau = log_tau.exp();
        if !(tau > 0.0 && tau.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let cur = self.state.alpha;
        // A' = A^(α/α') keeps each single-knot term A^α of θ fixed
        let pw = cur / alpha;
        let aux_a: Vec<f64> = self.state.aux_a.iter().map(|a| a.powf(pw)).collect();
        if !aux_a.iter().all(|a| *a > 0.0 && a.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let aux_prior: f64 = aux_a
            .iter()
            .zip(&self.state.aux_a)
            .zip(&self.state.aux_b)
            .map(|((&a2, &a), &b)| {
                stable::joint_logpdf_unchecked(a2, b, alpha) - stable::joint_logpdf_unchecked(a, b, cur) + pw.ln() + a2.ln()
                    - a.ln()
            })
            .sum();
        let priors = self.config.priors;
        let shift = [slope[0] * d, slope[1] * d, slope[2] * d];
        let mut fields = self.state.fields.clone();
        let mut prior = aux_prior + log_prior_log(tau, priors.tau) - log_prior_log(self.state.tau(), priors.tau);
        for w in Which::ALL {
            let sh = shift[w.index()];
            let v = match w {
                Which::Mu => &mut fields.mu,
                Which::Gamma => &mut fields.gamma,
                Which::Xi => &mut fields.xi,
            };
            for x in v.iter_mut() {
                *x += sh;
            }
            prior += self.level_prior_shift(w, sh);
        }
        match Caches::build(&self.ctx, &fields, alpha, tau, &aux_a) {
            Ok(c) => {
                let r = c.total() - self.caches.total() + prior;
                self.pending = Some(c);
                self.pending_ridge = Some(RidgeCandidate { fields, alpha, log_tau, shift, aux_a });
                r
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    pub fn update_ridge(&mut self, burn_in: bool) -> bool {
        let Some(slope) = self.ridge.slopes() else {
            return false;
        };
        let d = self.state.steps[Block::Ridge.index()] * self.normal();
        let log_r = self.log_ratio_ridge(d, slope);
        let ok = self.decide(Block::Ridge, log_r, burn_in);
        if ok {
            let c = self.pending_ridge.take().expect("state of accepted proposal");
            self.state.fields = c.fields;
            self.state.alpha = c.alpha;
            self.state.log_tau = c.log_tau;
            self.state.aux_a = c.aux_a;
            for w in Which::ALL {
                self.shift_intercept(w, c.shift[w.index()]);
            }
            self.caches = self.pending.take().expect("caches of accepted proposal");
        }
        self.pending = None;
        self.pending_ridge = None;
        ok
    }

    /// True when γ and ξ are shared by all sites, which the effect-scale
    /// move needs to keep μ a level shift.
    fn scale_move_applies(&self) -> bool {
        !self.ctx.independent
            && matches!(self.state.priors[Which::Gamma.index()], FieldState::Constant { .. })
            && matches!(self.state.priors[Which::Xi.index()], FieldState::Constant { .. })
    }

    /// log R for multiplying every A_lt by e^`lc` while moving γ by -αξ·lc
    /// and μ by σ(e^(-αξ·lc) - 1)/ξ, which leaves every conditional GEV
    /// distribution unchanged. Jacobian e^(lc) per random effect.
    pub fn log_ratio_effect_scale(&mut self, lc: f64) -> f64 {
        self.pending = None;
        self.pending_ridge = None;
        if !self.scale_move_applies() || !lc.is_finite() {
            return f64::NEG_INFINITY;
        }
        let alpha = self.state.alpha;
        let xi = self.state.fields.xi[0];
        let sigma = self.state.fields.gamma[0].exp();
        let dg = -alpha * xi * lc;
        let dmu = if xi.abs() < GUMBEL_TOL { -sigma * alpha * lc } else { sigma * dg.exp_m1() / xi };
        let scale = lc.exp();
        let aux_a: Vec<f64> = self.state.aux_a.iter().map(|a| a * scale).collect();
        if !aux_a.iter().all(|a| *a > 0.0 && a.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let prior_a: f64 = aux_a
            .iter()
            .zip(&self.state.aux_a)
            .zip(&self.state.aux_b)
            .map(|((&a2, &a), &b)| stable::joint_logpdf_unchecked(a2, b, alpha) - stable::joint_logpdf_unchecked(a, b, alpha))
            .sum();
        let mut fields = self.state.fields.clone();
        for x in fields.mu.iter_mut() {
            *x += dmu;
        }
        for x in fields.gamma.iter_mut() {
            *x += dg;
        }
        let prior = prior_a
            + aux_a.len() as f64 * lc
            + self.level_prior_shift(Which::Mu, dmu)
            + self.level_prior_shift(Which::Gamma, dg);
        match Caches::build(&self.ctx, &fields, alpha, self.state.tau(), &aux_a) {
            Ok(c) => {
                let r = c.total() - self.caches.total() + prior;
                self.pending = Some(c);
                self.pending_ridge =
                    Some(RidgeCandidate { fields, alpha, log_tau: self.state.log_tau, shift: [dmu, dg, 0.0], aux_a });
                r
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    pub fn update_effect_scale(&mut self, burn_in: bool) -> bool {
        if !self.scale_move_applies() {
            return false;
        }
        let lc = self.state.steps[Block::EffectScale.index()] * self.normal();
        let log_r = self.log_ratio_effect_scale(lc);
        let ok = self.decide(Block::EffectScale, log_r, burn_in);
        if ok {
            let c = self.pending_ridge.take().expect("state of accepted proposal");
            self.state.fields = c.fields;
            self.state.aux_a = c.aux_a;
            for w in Which::ALL {
                self.shift_intercept(w, c.shift[w.index()]);
            }
            self.caches = self.pending.take().expect("caches of accepted proposal");
        }
        self.pending = None;
        self.pending_ridge = None;
        ok
    }

    // ---- auxiliary variables ----

    /// log R for moving A_lt to `cand`, including the log-normal Hastings
    /// term ln(A') - ln(A).
    pub fn log_ratio_aux_a(&mut self, l: usize, t: usize, cand: f64) -> f64 {
        self.scratch_aux.clear();
        if !(cand > 0.0) || !cand.is_finite() {
            return f64::NEG_INFINITY;
        }
        let (n, t_n, nl) = (self.ctx.n, self.ctx.t, self.ctx.l);
        let alpha = self.state.alpha;
        let cur = self.state.aux_a[t * nl + l];
        let b = self.state.aux_b[t * nl + l];
        let mut delta = 0.0;
        let da = cand - cur;
        for i in 0..n {
            let w = self.caches.wt[i * nl + l];
            if w == 0.0 {
                continue;
            }
            let k = i * t_n + t;
            let old = self.caches.ssum[k];
            let mut s = old + da * w;
            if old.max(da.abs() * w) > CANCEL_LIMIT * s || !(s > 0.0) {
                let row = &self.caches.wt[i * nl..(i + 1) * nl];
                let a = &self.state.aux_a[t * nl..(t + 1) * nl];
                s = row.iter().zip(a).enumerate().map(|(j, (w, a))| w * if j == l { cand } else { *a }).sum();
            }
            let ln_theta = if self.ctx.independent { 0.0 } else { self.caches.lw_max[i] + alpha * s.ln() };
            let new = self.ctx.term(self.ctx.y[k], &self.state.fields.params_at(i), ln_theta, alpha);
            delta += new - self.caches.ll[k];
            self.scratch_aux.push((k, s, ln_theta, new));
        }
        delta + stable::joint_logpdf_unchecked(cand, b, alpha) - stable::joint_logpdf_unchecked(cur, b, alpha)
            + cand.ln()
            - cur.ln()
    }

    pub fn update_aux_a(&mut self, l: usize, t: usize, burn_in: bool) -> bool {
        let nl = self.ctx.l;
        let cur = self.state.aux_a[t * nl + l];
        let cand = cur * (self.state.steps[Block::AuxA.index()] * self.normal()).exp();
        let log_r = self.log_ratio_aux_a(l, t, cand);
        let ok = self.decide(Block::AuxA, log_r, burn_in);
        if ok {
            self.state.aux_a[t * nl + l] = cand;
            for &(k, s, lt, ll) in &self.scratch_aux {
                self.caches.ssum[k] = s;
                self.caches.ln_theta[k] = lt;
                self.caches.ll[k] = ll;
            }
        }
        ok
    }

    /// log R for moving B_lt to `cand`; B does not enter the likelihood.
    pub fn log_ratio_aux_b(&self, l: usize, t: usize, cand: f64) -> f64 {
        if !(cand > 0.0 && cand < 1.0) {
            return f64::NEG_INFINITY;
        }
        let k = t * self.ctx.l + l;
        let (a, b) = (self.state.aux_a[k], self.state.aux_b[k]);
        let alpha = self.state.alpha;
        stable::joint_logpdf_unchecked(a, cand, alpha) - stable::joint_logpdf_unchecked(a, b, alpha)
    }

    pub fn update_aux_b(&mut self, l: usize, t: usize, burn_in: bool) -> bool {
        let k = t * self.ctx.l + l;
        let cand = self.state.aux_b[k] + self.state.steps[Block::AuxB.index()] * self.normal();
        let log_r = self.log_ratio_aux_b(l, t, cand);
        let ok = self.decide(Block::AuxB, log_r, burn_in);
        if ok {
            self.state.aux_b[k] = cand;
        }
        ok
    }

    // ---- sweeps ----

    /// One full sweep in the fixed update order.
    pub fn sweep(&mut self, burn_in: bool) -> Result<()> {
        for w in Which::ALL {
            match self.state.priors[w.index()] {
                FieldState::Constant { .. } => {
                    self.update_constant(w, burn_in);
                }
                FieldState::Spatial(_) => {
                    for i in 0..self.ctx.n {
                        self.update_field_site(w, i, burn_in);
                    }
                }
            }
        }
        for w in Which::ALL {
            self.update_hyper(w, burn_in)?;
        }
        for w in Which::ALL {
            self.update_spike(w);
        }
        if self.ctx.independent {
            return Ok(());
        }
        self.update_log_tau(burn_in);
        if self.ctx.alpha_fixed.is_none() {
            self.update_alpha(burn_in);
            self.update_ridge(burn_in);
        }
        self.update_effect_scale(burn_in);
        for t in 0..self.ctx.t {
            for l in 0..self.ctx.l {
                self.update_aux_a(l, t, burn_in);
                self.update_aux_b(l, t, burn_in);
            }
        }
        Ok(())
    }

    /// Compare the cached likelihood with a full recomputation and replace
    /// the caches with the fresh values. Returns the absolute discrepancy.
    pub fn audit(&mut self) -> Result<f64> {
        let fresh = self.fresh_caches()?;
        let (a, b) = (self.caches.total(), fresh.total());
        let err = if a == b { 0.0 } else { (a - b).abs() };
        self.audits += 1;
        if !(err <= AUDIT_TOL * b.abs().max(1.0)) {
            self.audit_failures += 1;
        }
        if err.is_finite() {
            self.max_audit_error = self.max_audit_error.max(err);
        }
        self.caches = fresh;
        Ok(err)
    }

    fn record(&self, chain: usize, iter: usize) -> Draw {
        let hyper = core::array::from_fn(|k| match &self.state.priors[k] {
            FieldState::Constant { .. } => None,
            FieldState::Spatial(g) => Some(HyperDraw {
                beta: g.hyper.beta.clone(),
                delta2: g.hyper.delta2,
                rho: g.hyper.rho,
                nu: g.hyper.nu,
                g: g.spike.map(|s| s.g),
            }),
        });
        Draw {
            chain,
            iter,
            alpha: self.state.alpha,
            tau: self.state.tau(),
            mu: self.state.fields.mu.clone(),
            gamma: self.state.fields.gamma.clone(),
            xi: self.state.fields.xi.clone(),
            hyper,
            aux_a: self.state.aux_a.clone(),
        }
    }

    fn field_kinds(&self) -> [FieldKind; 3] {
        core::array::from_fn(|k| match self.spec.field(Which::ALL[k]) {
            FieldSpec::Constant { .. } => FieldKind::Constant,
            FieldSpec::Spatial { use_covariates, .. } => FieldKind::Spatial { use_covariates: *use_covariates },
        })
    }

    /// Run the configured number of iterations and collect retained draws.
    pub fn run(&mut self, chain: usize) -> Result<PosteriorSamples> {
        let c = self.config.clone();
        let mut draws = Vec::with_capacity(c.draws_per_chain());
        for iter in 0..c.n_iters {
            let burn_in = iter < c.burn_in;
            self.sweep(burn_in)?;
            if burn_in && iter >= c.burn_in / 4 {
                self.ridge.push(self.ridge_point());
            }
            if (iter + 1) % c.audit_every == 0 {
                self.audit()?;
            }
            if burn_in && (iter + 1) % c.adapt_window == 0 {
                adapt_step(&self.window, &mut self.state.steps, iter, c.burn_in)?;
                self.window = Default::default();
            }
            if !burn_in && (iter - c.burn_in) % c.thin == c.thin - 1 {
                draws.push(self.record(chain, iter));
            }
        }
        Ok(PosteriorSamples {
            draws,
            sites: self.ctx.site_info.clone(),
            years: self.ctx.years.clone(),
            knots: self.ctx.knots.clone(),
            fields: self.field_kinds(),
            alpha_fixed: self.spec.alpha_fixed,
            diagnostics: alloc::vec![self.diagnostics(chain)],
        })
    }

    pub fn diagnostics(&self, chain: usize) -> ChainDiagnostics {
        ChainDiagnostics {
            chain,
            acceptance: Block::all().iter().map(|b| (b.name(), self.totals[b.index()])).collect(),
            steps: self.state.steps.to_vec(),
            audits: self.audits,
            audit_failures: self.audit_failures,
            max_audit_error: self.max_audit_error,
            nan_rejections: self.nan_rejections,
            initial_log_lik: self.initial_log_lik,
        }
    }
}

/// Log prior of log x when x ~ InvGamma, including the Jacobian x.
fn log_prior_log(x: f64, p: InvGamma) -> f64 {
    inv_gamma_ln_pdf(x, p.shape, p.scale) + x.ln()
}

fn accept<R: Rng + ?Sized>(rng: &mut R, log_r: f64) -> bool {
    if log_r.is_nan() {
        return false;
    }
    let u: f64 = rng.sample(Open01);
    u.ln() < log_r
}
