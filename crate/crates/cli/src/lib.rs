//! Command-line companion of `maxstable`: CSV data and sample stores,
//! TOML configuration, run manifests and the simulation-study harness.

pub mod commands;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod manifest;

pub use commands::run;
pub use error::{AppError, Result};
