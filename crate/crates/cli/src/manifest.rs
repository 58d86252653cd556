//! Run manifests: enough to repeat a command and check its outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    /// Arguments after the program name.
    pub command: Vec<String>,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_bytes(b: &[u8]) -> String {
    hex::encode(Sha256::digest(b))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let b = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    Ok(sha256_bytes(&b))
}

fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| Ok(FileDigest { path: p.display().to_string(), sha256: sha256_file(p)? }))
        .collect()
}

impl Manifest {
    /// Describe a finished run. `config` is the canonical text of the
    /// resolved settings.
    pub fn new(command: &[String], seed: Option<u64>, config: &str, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<Self> {
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: maxstable_version().into(),
            command: command.to_vec(),
            seed,
            config_sha256: sha256_bytes(config.as_bytes()),
            inputs: digests(inputs)?,
            outputs: digests(outputs)?,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).map_err(|e| AppError::Invalid(e.to_string()))?;
        std::fs::write(&p, text).map_err(|e| AppError::io(&p, e))?;
        Ok(p)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        toml::from_str(&text).map_err(|e| AppError::Parse { path: path.display().to_string(), line: 0, msg: e.to_string() })
    }

    /// Inputs whose content no longer matches the recorded digest.
    pub fn changed_inputs(&self) -> Vec<String> {
        self.inputs
            .iter()
            .filter(|d| sha256_file(Path::new(&d.path)).ok().as_deref() != Some(d.sha256.as_str()))
            .map(|d| d.path.clone())
            .collect()
    }

    /// The recorded command with `--out` pointed at `out` when given.
    pub fn replay_args(&self, out: Option<&Path>) -> Vec<String> {
        let mut args = self.command.clone();
        if let Some(o) = out {
            if let Some(k) = args.iter().position(|a| a == "--out") {
                if k + 1 < args.len() {
                    args[k + 1] = o.display().to_string();
                }
            } else {
                args.push("--out".into());
                args.push(o.display().to_string());
            }
        }
        args
    }
}

fn maxstable_version() -> &'static str {
    // the core crate is versioned in lockstep with this crate
    env!("CARGO_PKG_VERSION")
}
