//! Hierarchical max-stable spatial extremes with positive stable random
//! effects.
//!
//! Block maxima `Y_t(s)` are GEV conditional on year-specific PS(α) random
//! effects attached to a grid of Gaussian kernel knots. The crate provides the
//! distributional building blocks, process simulation and extremal
//! coefficients, Gaussian-process priors on the GEV fields, an MCMC sampler
//! using auxiliary variables for the positive stable effects, and post-fit
//! analytics. It is `no_std` with `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analytics;
pub mod basis;
pub mod dataset;
pub mod error;
pub mod gevdist;
pub mod gp;
pub mod mcmc;
pub mod process;
pub mod special;
pub mod stable;

pub use basis::{KernelBasis, KnotGrid, Point};
pub use dataset::{Dataset, Site};
pub use error::{Error, Result};
pub use gevdist::GevParams;
pub use gp::{GpHyper, SpikeSlabState};
pub use process::{Dependence, ProcessModel, SpatialGevFields};
pub use stable::StablePair;
