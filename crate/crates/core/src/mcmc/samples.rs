use alloc::string::String;
use alloc::vec::Vec;


use super::{AcceptCount, Which};
use crate::basis::{KnotGrid, Point};
use crate::dataset::Site;
use crate::error::{Error, Result};
use crate::gevdist::GevParams;

/// Whether a fitted field was constant or a GP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Constant,
    Spatial { use_covariates: bool },
}

/// GP hyperparameters of one field at one retained iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperDraw {
    pub beta: Vec<f64>,
    pub delta2: f64,
    pub rho: f64,
    pub nu: f64,
    /// Spike-slab indicator when the selection prior is on.
    pub g: Option<bool>,
}

/// One retained state.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub chain: usize,
    pub iter: usize,
    pub alpha: f64,
    pub tau: f64,
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
    pub xi: Vec<f64>,
    pub hyper: [Option<HyperDraw>; 3],
    /// Random effects, row-major `years × knots`.
    pub aux_a: Vec<f64>,
}

impl Draw {
    pub fn field(&self, w: Which) -> &[f64] {
        match w {
            Which::Mu => &self.mu,
            Which::Gamma => &self.gamma,
            Which::Xi => &self.xi,
        }
    }

    pub fn params_at(&self, i: usize) -> GevParams {
        GevParams { mu: self.mu[i], sigma: self.gamma[i].exp(), xi: self.xi[i] }
    }

    /// Random effects of year t.
    pub fn effects(&self, t: usize, n_knots: usize) -> &[f64] {
        &self.aux_a[t * n_knots..(t + 1) * n_knots]
    }
}

/// Per-chain sampler diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainDiagnostics {
    pub chain: usize,
    /// Post-burn-in acceptance counts per proposal block.
    pub acceptance: Vec<(String, AcceptCount)>,
    /// Final proposal scales per block.
    pub steps: Vec<f64>,
    pub audits: usize,
    pub audit_failures: usize,
    /// Largest |cached - recomputed| log-likelihood seen in an audit.
    pub max_audit_error: f64,
    pub nan_rejections: u64,
    pub initial_log_lik: f64,
}

impl ChainDiagnostics {
    pub fn rate(&self, block: &str) -> Option<f64> {
        self.acceptance.iter().find(|(n, _)| n == block).and_then(|(_, c)| c.rate())
    }
}

/// Retained draws of all chains plus what is needed to use them.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    pub draws: Vec<Draw>,
    pub sites: Vec<Site>,
    pub years: Vec<i64>,
    pub knots: KnotGrid,
    pub fields: [FieldKind; 3],
    pub alpha_fixed: Option<f64>,
    pub diagnostics: Vec<ChainDiagnostics>,
}

impl PosteriorSamples {
    /// Concatenate single-chain outputs of the same model and data.
    pub fn pool(runs: Vec<PosteriorSamples>) -> Result<PosteriorSamples> {
        let mut it = runs.into_iter();
        let mut out = it.next().ok_or_else(|| Error::Input("no chains to pool".into()))?;
        for r in it {
            if r.sites != out.sites || r.years != out.years || r.knots != out.knots || r.fields != out.fields {
                return Err(Error::Input("chains were run on different models".into()));
            }
            out.draws.extend(r.draws);
            out.diagnostics.extend(r.diagnostics);
        }
        Ok(out)
    }

    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn locations(&self) -> Vec<Point> {
        self.sites.iter().map(|s| s.location).collect()
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.alpha).collect()
    }

    pub fn tau(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.tau).collect()
    }

    /// Draws of one field at site i; γ is reported as is (log scale).
    pub fn field_at(&self, w: Which, i: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.field(w)[i]).collect()
    }

    /// Mean covariate row `x(s)` used by a field.
    pub fn design_row(&self, w: Which, covariates: &[f64]) -> Vec<f64> {
        let mut row = alloc::vec![1.0];
        if let FieldKind::Spatial { use_covariates: true } = self.fields[w.index()] {
            row.extend_from_slice(covariates);
        }
        row
    }

    /// Same site ids at the same coordinates.
    pub fn same_sites(&self, other: &PosteriorSamples) -> bool {
        self.sites.len() == other.sites.len()
            && self.sites.iter().zip(&other.sites).all(|(a, b)| a.id == b.id && a.location == b.location)
    }
}
