//! Plain-text (TOML) configuration for `fit`.
//!
//! ```toml
//! seed = 11
//! n_iters = 25000
//! burn_in = 10000
//! alpha_fixed = 1.0        # optional
//!
//! [knots]
//! m = 7
//! lower = 0.0
//! upper = 6.0              # or: file = "knots.csv"
//!
//! [mu]
//! kind = "spatial"
//! nu = 0.5                 # or "free"
//! spike_slab = false
//!
//! [gamma]
//! kind = "constant"
//! prior_sd = 1.0
//! ```

use std::path::{Path, PathBuf};

use maxstable::basis::{KnotGrid, Point};
use maxstable::gp::SpikeSlabPrior;
use maxstable::mcmc::{FieldSpec, FitConfig, InvGamma, ModelSpec, Priors, Smoothness};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(untagged)]
pub enum NuSetting {
    Fixed(f64),
    Named(String),
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FieldSetting {
    pub kind: String,
    pub nu: Option<NuSetting>,
    #[serde(default)]
    pub spike_slab: bool,
    #[serde(default)]
    pub use_covariates: bool,
    pub prior_mean: Option<f64>,
    pub prior_sd: Option<f64>,
}

impl FieldSetting {
    fn constant() -> Self {
        FieldSetting { kind: "constant".into(), nu: None, spike_slab: false, use_covariates: false, prior_mean: None, prior_sd: None }
    }

    fn spatial() -> Self {
        FieldSetting { kind: "spatial".into(), ..Self::constant() }
    }

    fn resolve(&self, name: &str) -> Result<FieldSpec> {
        match self.kind.as_str() {
            "constant" => Ok(FieldSpec::Constant {
                prior_mean: self.prior_mean.unwrap_or(0.0),
                prior_sd: self.prior_sd.unwrap_or(100.0),
            }),
            "spatial" => {
                let nu = match &self.nu {
                    None => Smoothness::Fixed(0.5),
                    Some(NuSetting::Fixed(v)) => Smoothness::Fixed(*v),
                    Some(NuSetting::Named(s)) if s == "free" => Smoothness::Free,
                    Some(NuSetting::Named(s)) => {
                        return Err(AppError::Invalid(format!("[{name}] nu must be a number or \"free\", got {s:?}")))
                    }
                };
                Ok(FieldSpec::Spatial { nu, spike_slab: self.spike_slab, use_covariates: self.use_covariates })
            }
            k => Err(AppError::Invalid(format!("[{name}] kind must be \"constant\" or \"spatial\", got {k:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct KnotSetting {
    pub m: Option<usize>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub file: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PriorSetting {
    pub tau: [f64; 2],
    pub delta2: [f64; 2],
    pub rho: [f64; 2],
    pub nu: [f64; 2],
    pub beta_sd: f64,
    pub p_slab: f64,
    pub slab: [f64; 2],
}

impl Default for PriorSetting {
    fn default() -> Self {
        PriorSetting {
            tau: [0.1, 0.1],
            delta2: [0.1, 0.1],
            rho: [0.1, 0.1],
            nu: [0.1, 0.1],
            beta_sd: 100.0,
            p_slab: 0.5,
            slab: [0.1, 0.1],
        }
    }
}

/// Everything `fit` reads from its configuration file.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    pub seed: u64,
    pub n_iters: usize,
    pub burn_in: usize,
    pub n_chains: usize,
    pub thin: usize,
    pub audit_every: usize,
    pub alpha_fixed: Option<f64>,
    #[serde(default)]
    pub knots: KnotSetting,
    pub mu: FieldSetting,
    pub gamma: FieldSetting,
    pub xi: FieldSetting,
    #[serde(default)]
    pub priors: PriorSetting,
}

impl Default for FitSettings {
    fn default() -> Self {
        let c = FitConfig::default();
        FitSettings {
            seed: c.seed,
            n_iters: c.n_iters,
            burn_in: c.burn_in,
            n_chains: c.n_chains,
            thin: c.thin,
            audit_every: c.audit_every,
            alpha_fixed: None,
            knots: KnotSetting::default(),
            mu: FieldSetting::spatial(),
            gamma: FieldSetting::constant(),
            xi: FieldSetting::constant(),
            priors: PriorSetting::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialSettings {
    seed: Option<u64>,
    n_iters: Option<usize>,
    burn_in: Option<usize>,
    n_chains: Option<usize>,
    thin: Option<usize>,
    audit_every: Option<usize>,
    alpha_fixed: Option<f64>,
    knots: Option<KnotSetting>,
    mu: Option<FieldSetting>,
    gamma: Option<FieldSetting>,
    xi: Option<FieldSetting>,
    priors: Option<PriorSetting>,
}

impl FitSettings {
    /// Parse a config file; absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let p: PartialSettings = toml::from_str(text).map_err(|e| AppError::Invalid(format!("config: {e}")))?;
        let d = FitSettings::default();
        Ok(FitSettings {
            seed: p.seed.unwrap_or(d.seed),
            n_iters: p.n_iters.unwrap_or(d.n_iters),
            burn_in: p.burn_in.unwrap_or(d.burn_in),
            n_chains: p.n_chains.unwrap_or(d.n_chains),
            thin: p.thin.unwrap_or(d.thin),
            audit_every: p.audit_every.unwrap_or(d.audit_every),
            alpha_fixed: p.alpha_fixed,
            knots: p.knots.unwrap_or_default(),
            mu: p.mu.unwrap_or(d.mu),
            gamma: p.gamma.unwrap_or(d.gamma),
            xi: p.xi.unwrap_or(d.xi),
            priors: p.priors.unwrap_or_default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text of the resolved settings (hashed into manifests).
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }

    /// Build the knot grid: an explicit file, an explicit regular grid, or a
    /// 7 × 7 grid over the bounding square of the sites.
    pub fn knot_grid(&self, sites: &[Point], base: &Path) -> Result<KnotGrid> {
        if let Some(f) = &self.knots.file {
            let p = if f.is_absolute() { f.clone() } else { base.join(f) };
            return crate::io::read_knots(&p);
        }
        let (lo, hi) = sites.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.x).min(p.y), hi.max(p.x).max(p.y))
        });
        let m = self.knots.m.unwrap_or(7);
        let lower = self.knots.lower.unwrap_or(lo);
        let upper = self.knots.upper.unwrap_or(if hi > lo { hi } else { lo + 1.0 });
        Ok(KnotGrid::regular(m, lower, upper)?)
    }

    pub fn model_spec(&self, knots: KnotGrid) -> Result<ModelSpec> {
        let spec = ModelSpec {
            knots,
            mu: self.mu.resolve("mu")?,
            gamma: self.gamma.resolve("gamma")?,
            xi: self.xi.resolve("xi")?,
            alpha_fixed: self.alpha_fixed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn fit_config(&self) -> Result<FitConfig> {
        let ig = |p: [f64; 2]| InvGamma::new(p[0], p[1]);
        let pr = &self.priors;
        let c = FitConfig {
            n_iters: self.n_iters,
            burn_in: self.burn_in,
            n_chains: self.n_chains,
            thin: self.thin,
            audit_every: self.audit_every,
            seed: self.seed,
            priors: Priors {
                tau: ig(pr.tau),
                delta2: ig(pr.delta2),
                rho: ig(pr.rho),
                nu: ig(pr.nu),
                beta_sd: pr.beta_sd,
                spike: SpikeSlabPrior { p_slab: pr.p_slab, shape: pr.slab[0], scale: pr.slab[1] },
            },
            ..FitConfig::default()
        };
        c.validate()?;
        Ok(c)
    }
}
