//! Versioned experiment configuration.

use std::path::{Path, PathBuf};

use contrast_core::degrade::DegradationConfig;
use contrast_core::phantom::PhantomConfig;
use contrast_core::segment::DEFAULT_THRESHOLD_GRID;
use contrast_net::{InferenceConfig, ModelSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub profile: Profile,
    pub phantom: PhantomConfig,
    /// Phantoms whose pseudo-raw stacks are used for training.
    pub n_train_phantoms: usize,
    /// Held-out phantoms for evaluation.
    pub n_eval_phantoms: usize,
    /// Added to the phantom seed for held-out phantoms.
    pub eval_seed_offset: u64,
    pub degradation: DegradationConfig,
    pub model: ModelSpec,
    pub training: TrainConfig,
    pub inference: InferenceConfig,
    /// Largest k in the segmentation sweep.
    pub sweep_max_k: usize,
    pub threshold_grid: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// CPU-sized experiment: eight 128×128×32 training phantoms, depth-3
    /// model with 16 channels, 40×50 steps on 64×64 crops.
    pub fn desk() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            profile: Profile::Desk,
            phantom: PhantomConfig::default(),
            n_train_phantoms: 8,
            n_eval_phantoms: 1,
            eval_seed_offset: 1000,
            degradation: DegradationConfig::default(),
            model: ModelSpec::desk(),
            training: TrainConfig::desk(),
            inference: InferenceConfig::default(),
            sweep_max_k: 6,
            threshold_grid: DEFAULT_THRESHOLD_GRID,
            output_dir: PathBuf::from("runs/desk"),
        }
    }

    /// Full-size model and schedule.
    pub fn paper() -> Self {
        Self {
            profile: Profile::Paper,
            model: ModelSpec::paper(),
            training: TrainConfig::paper(),
            output_dir: PathBuf::from("runs/paper"),
            ..Self::desk()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Sets every stochastic component's seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.phantom.seed = seed;
        self.degradation.seed = seed;
        self.training.seed = seed;
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(HarnessError::MissingInput(path.to_path_buf()));
        }
        let cfg: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.phantom.validate()?;
        self.degradation.validate()?;
        self.model.validate()?;
        let m = self.model.size_multiple();
        self.training.validate(m)?;
        self.inference.validate(m)?;
        if self.n_train_phantoms == 0 || self.n_eval_phantoms == 0 {
            return Err(HarnessError::Config("n_train_phantoms and n_eval_phantoms must be >= 1".into()));
        }
        if self.threshold_grid < 2 {
            return Err(HarnessError::Config("threshold_grid must be >= 2".into()));
        }
        Ok(())
    }
}
