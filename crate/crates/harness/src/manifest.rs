//! Per-run provenance record, enough to repeat the run exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cli::Command;
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const MANIFEST_FILE: &str = "run-manifest.json";
pub const DETERMINISTIC_ENV: &str = "DEEPCONTRAST_DETERMINISTIC";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub code_version: String,
    pub command: Command,
    /// Fully resolved configuration, including seeds.
    pub config: ExperimentConfig,
    pub deterministic: bool,
    pub inputs: Vec<FileRecord>,
    /// Output paths relative to `config.output_dir`.
    pub outputs: Vec<FileRecord>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(HarnessError::MissingInput(path.to_path_buf()));
        }
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }

    /// Fails if any recorded input changed since the run.
    pub fn verify_inputs(&self) -> Result<()> {
        for f in &self.inputs {
            if !f.path.exists() {
                return Err(HarnessError::MissingInput(f.path.clone()));
            }
            if sha256_file(&f.path)? != f.sha256 {
                return Err(HarnessError::InputChanged { path: f.path.clone() });
            }
        }
        Ok(())
    }
}

/// `DEEPCONTRAST_DETERMINISTIC=1` requests deterministic compute. Every
/// code path here is single-threaded and seeded, so results are
/// reproducible either way; the flag is recorded for provenance.
pub fn deterministic_requested() -> bool {
    std::env::var(DETERMINISTIC_ENV).map(|v| v == "1").unwrap_or(false)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
