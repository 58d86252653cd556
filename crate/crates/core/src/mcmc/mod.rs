//! Metropolis-within-Gibbs sampler for the auxiliary-variable model.
//!
//! Each year carries `L` positive stable random effects represented by pairs
//! `(A_lt, B_lt)`. Parameters are updated one at a time conditional on the
//! rest; proposal scales are tuned during burn-in and frozen afterwards.

mod sampler;
mod samples;

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::KnotGrid;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gp::SpikeSlabPrior;

pub use sampler::{log_likelihood, ModelState, Sampler};
pub use samples::{ChainDiagnostics, Draw, FieldKind, HyperDraw, PosteriorSamples};

/// One of the three GEV parameter fields; the scale is modelled as γ = log σ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Which {
    Mu,
    Gamma,
    Xi,
}

impl Which {
    pub const ALL: [Which; 3] = [Which::Mu, Which::Gamma, Which::Xi];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Which::Mu => "mu",
            Which::Gamma => "gamma",
            Which::Xi => "xi",
        }
    }
}

/// Matérn smoothness: held fixed or sampled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Smoothness {
    Fixed(f64),
    Free,
}

/// Prior structure of one GEV parameter field.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldSpec {
    /// One value shared by all sites with a normal prior.
    Constant { prior_mean: f64, prior_sd: f64 },
    /// Gaussian process with mean `x(s)ᵀβ` and Matérn covariance.
    Spatial { nu: Smoothness, spike_slab: bool, use_covariates: bool },
}

impl FieldSpec {
    pub fn constant() -> Self {
        FieldSpec::Constant { prior_mean: 0.0, prior_sd: 100.0 }
    }

    /// Exponential covariance, intercept-only mean.
    pub fn exponential() -> Self {
        FieldSpec::Spatial { nu: Smoothness::Fixed(0.5), spike_slab: false, use_covariates: false }
    }
}

/// What is being fitted: knots plus the structure of each field.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub knots: KnotGrid,
    pub mu: FieldSpec,
    pub gamma: FieldSpec,
    pub xi: FieldSpec,
    /// Hold α at this value instead of sampling it. `Some(1.0)` is the
    /// independence model.
    pub alpha_fixed: Option<f64>,
}

impl ModelSpec {
    /// Spatial location, constant scale and shape.
    pub fn spatial_location(knots: KnotGrid) -> Self {
        ModelSpec {
            knots,
            mu: FieldSpec::exponential(),
            gamma: FieldSpec::constant(),
            xi: FieldSpec::constant(),
            alpha_fixed: None,
        }
    }

    pub fn field(&self, w: Which) -> &FieldSpec {
        match w {
            Which::Mu => &self.mu,
            Which::Gamma => &self.gamma,
            Which::Xi => &self.xi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.is_empty() {
            return Err(Error::Input("no knots".into()));
        }
        if let Some(a) = self.alpha_fixed {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Parameter { name: "alpha", value: a });
            }
        }
        for w in Which::ALL {
            match self.field(w) {
                FieldSpec::Constant { prior_sd, .. } if !(*prior_sd > 0.0) => {
                    return Err(Error::Parameter { name: "prior_sd", value: *prior_sd })
                }
                FieldSpec::Spatial { nu: Smoothness::Fixed(nu), .. } if !(*nu > 0.0) => {
                    return Err(Error::Parameter { name: "nu", value: *nu })
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Inverse-gamma shape and scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InvGamma {
    pub const fn new(shape: f64, scale: f64) -> Self {
        InvGamma { shape, scale }
    }
}

/// Prior distributions. α is uniform on (0, 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Priors {
    pub tau: InvGamma,
    pub delta2: InvGamma,
    pub rho: InvGamma,
    pub nu: InvGamma,
    pub beta_sd: f64,
    pub spike: SpikeSlabPrior,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            tau: InvGamma::new(0.1, 0.1),
            delta2: InvGamma::new(0.1, 0.1),
            rho: InvGamma::new(0.1, 0.1),
            nu: InvGamma::new(0.1, 0.1),
            beta_sd: 100.0,
            spike: SpikeSlabPrior::default(),
        }
    }
}

/// Run-length, tuning and seeding options.
#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub n_iters: usize,
    pub burn_in: usize,
    pub n_chains: usize,
    pub thin: usize,
    pub target_accept: f64,
    pub adapt_window: usize,
    pub priors: Priors,
    pub seed: u64,
    /// Iterations between full likelihood recomputations.
    pub audit_every: usize,
    /// Drop the likelihood and sample the prior.
    pub prior_only: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_iters: 25_000,
            burn_in: 10_000,
            n_chains: 2,
            thin: 5,
            target_accept: 0.4,
            adapt_window: 50,
            priors: Priors::default(),
            seed: 0,
            audit_every: 500,
            prior_only: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iters {
            return Err(Error::Input(alloc::format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in,
                self.n_iters
            )));
        }
        if self.n_chains == 0 || self.thin == 0 || self.adapt_window == 0 || self.audit_every == 0 {
            return Err(Error::Input("chains, thinning, window and audit interval must be positive".into()));
        }
        Ok(())
    }

    /// Retained draws per chain.
    pub fn draws_per_chain(&self) -> usize {
        (self.n_iters - self.burn_in) / self.thin
    }
}

/// Proposal blocks, each with its own step size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Field(Which),
    LogTau,
    Alpha,
    AuxA,
    AuxB,
    LogDelta2(Which),
    LogRho(Which),
    LogNu(Which),
    /// Joint move of α with the random effects, the location and log-scale
    /// levels and log τ.
    Ridge,
    /// Common rescaling of the random effects with compensating μ and σ.
    EffectScale,
}

pub const N_BLOCKS: usize = 18;

impl Block {
    pub fn index(self) -> usize {
        match self {
            Block::Field(w) => w.index(),
            Block::LogTau => 3,
            Block::Alpha => 4,
            Block::AuxA => 5,
            Block::AuxB => 6,
            Block::LogDelta2(w) => 7 + 3 * w.index(),
            Block::LogRho(w) => 8 + 3 * w.index(),
            Block::LogNu(w) => 9 + 3 * w.index(),
            Block::Ridge => 16,
            Block::EffectScale => 17,
        }
    }

    pub fn all() -> [Block; N_BLOCKS] {
        let mut out = [Block::LogTau; N_BLOCKS];
        for w in Which::ALL {
            out[Block::Field(w).index()] = Block::Field(w);
            out[Block::LogDelta2(w).index()] = Block::LogDelta2(w);
            out[Block::LogRho(w).index()] = Block::LogRho(w);
            out[Block::LogNu(w).index()] = Block::LogNu(w);
        }
        out[Block::Alpha.index()] = Block::Alpha;
        out[Block::AuxA.index()] = Block::AuxA;
        out[Block::AuxB.index()] = Block::AuxB;
        out[Block::Ridge.index()] = Block::Ridge;
        out[Block::EffectScale.index()] = Block::EffectScale;
        out
    }

    pub fn name(self) -> alloc::string::String {
        match self {
            Block::Field(w) => w.name().into(),
            Block::LogTau => "log_tau".into(),
            Block::Alpha => "alpha".into(),
            Block::AuxA => "aux_a".into(),
            Block::AuxB => "aux_b".into(),
            Block::LogDelta2(w) => alloc::format!("{}_log_delta2", w.name()),
            Block::LogRho(w) => alloc::format!("{}_log_rho", w.name()),
            Block::LogNu(w) => alloc::format!("{}_log_nu", w.name()),
            Block::Ridge => "ridge".into(),
            Block::EffectScale => "effect_scale".into(),
        }
    }
}

/// Accept/propose counts of one block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AcceptCount {
    pub accepted: u64,
    pub proposed: u64,
}

impl AcceptCount {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

/// Lower and upper acceptance rates that trigger a step change.
pub const ADAPT_BAND: (f64, f64) = (0.3, 0.5);
/// Log of the multiplicative step change per window.
pub const ADAPT_LOG_FACTOR: f64 = 0.05;

/// End-of-window tuning: steps of blocks accepting below 0.3 shrink by
/// e^-0.05, above 0.5 grow by e^0.05. Only valid during burn-in.
pub fn adapt_step(window: &[AcceptCount], steps: &mut [f64], iter: usize, burn_in: usize) -> Result<()> {
    if iter >= burn_in {
        return Err(Error::Contract("proposal scales are frozen after burn-in"));
    }
    for (c, s) in window.iter().zip(steps.iter_mut()) {
        if let Some(r) = c.rate() {
            if r < ADAPT_BAND.0 {
                *s *= libm::exp(-ADAPT_LOG_FACTOR);
            } else if r > ADAPT_BAND.1 {
                *s *= libm::exp(ADAPT_LOG_FACTOR);
            }
        }
    }
    Ok(())
}

/// Seed of chain `k` derived from the run seed.
pub fn chain_seed(seed: u64, chain: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(chain as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Run one chain to completion.
pub fn run_chain(data: &Dataset, spec: &ModelSpec, config: &FitConfig, chain: usize) -> Result<PosteriorSamples> {
    let rng = ChaCha8Rng::seed_from_u64(chain_seed(config.seed, chain));
    let mut s = Sampler::new(data, spec, config, rng)?;
    s.run(chain)
}

/// Run `config.n_chains` chains sequentially and pool their draws.
pub fn fit(data: &Dataset, spec: &ModelSpec, config: &FitConfig) -> Result<PosteriorSamples> {
    config.validate()?;
    let runs: Result<Vec<_>> = (0..config.n_chains).map(|k| run_chain(data, spec, config, k)).collect();
    PosteriorSamples::pool(runs?)
}
