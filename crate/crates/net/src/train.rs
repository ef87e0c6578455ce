//! MAE training loop with Adam, plateau schedule and best-validation
//! checkpointing.

use log::info;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Provenance};
use crate::error::{NetError, Result};
use crate::optim::{Adam, AdamConfig, PlateauSchedule};
use crate::sampler::{Batch, PatchSampler};
use crate::unet::{mae_loss, Unet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    Mae,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub loss: Loss,
    pub validation_fraction: f64,
    /// Number of fixed crops drawn from the held-out planes.
    pub validation_patches: usize,
    pub lr_reduce_factor: f64,
    pub lr_reduce_patience_epochs: usize,
    /// Random flips and 90° rotations of training crops.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            learning_rate: 4e-4,
            epochs: 450,
            steps_per_epoch: 200,
            batch_size: 16,
            patch_size: 128,
            loss: Loss::Mae,
            validation_fraction: 0.1,
            validation_patches: 64,
            lr_reduce_factor: 0.5,
            lr_reduce_patience_epochs: 10,
            augment: false,
            seed: 0,
        }
    }

    /// CPU-sized run: 40 epochs of 50 steps on 64×64 crops.
    pub fn desk() -> Self {
        Self {
            epochs: 40,
            steps_per_epoch: 50,
            patch_size: 64,
            ..Self::paper()
        }
    }

    pub fn validate(&self, multiple: usize) -> Result<()> {
        let bad = |msg: String| Err(NetError::InvalidConfig(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 || self.validation_patches == 0 {
            return bad("epochs, steps_per_epoch, batch_size and validation_patches must be >= 1".into());
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(multiple) {
            return Err(NetError::Divisibility {
                got: (self.patch_size, self.patch_size),
                multiple,
            });
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return bad(format!("validation_fraction must be in (0, 0.5), got {}", self.validation_fraction));
        }
        if !(self.lr_reduce_factor > 0.0 && self.lr_reduce_factor <= 1.0) {
            return bad(format!("lr_reduce_factor must be in (0, 1], got {}", self.lr_reduce_factor));
        }
        if self.lr_reduce_patience_epochs == 0 {
            return bad("lr_reduce_patience_epochs must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Validation MAE of returning the input unchanged.
    pub identity_val_loss: f64,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Mean absolute error over all validation pixels.
pub fn evaluate(model: &Unet<f32>, batches: &[Batch]) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for b in batches {
        let y = model.forward(&b.inputs)?;
        let (loss, _) = mae_loss(&y, &b.targets);
        total += loss * y.data.len() as f64;
        count += y.data.len();
    }
    Ok(total / count as f64)
}

/// Validation MAE of the identity predictor on the same batches.
pub fn identity_loss(batches: &[Batch]) -> f64 {
    let (mut total, mut count) = (0.0, 0usize);
    for b in batches {
        let (loss, _) = mae_loss(&b.inputs, &b.targets);
        total += loss * b.inputs.data.len() as f64;
        count += b.inputs.data.len();
    }
    total / count as f64
}

/// Trains `model` and returns a checkpoint holding the best-validation
/// weights. Aborts with [`NetError::Divergence`] on a non-finite loss.
pub fn train(mut model: Unet<f32>, sampler: &mut PatchSampler, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate(model.spec().size_multiple())?;
    let val = sampler.validation_batches(cfg.validation_patches);
    let identity = identity_loss(&val);
    let mut adam = Adam::new(AdamConfig::default(), model.param_count());
    let mut schedule = PlateauSchedule::new(cfg.learning_rate, cfg.lr_reduce_factor, cfg.lr_reduce_patience_epochs);
    let mut history = TrainingHistory {
        identity_val_loss: identity,
        best_val_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best = model.flat_params();
    info!(
        "training {} parameters, identity validation MAE {identity:.5}",
        model.param_count()
    );

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr();
        let mut sum = 0.0;
        for step in 0..cfg.steps_per_epoch {
            let batch = sampler.next_batch();
            let (loss, grads) = model.mae_loss_and_grad(&batch.inputs, &batch.targets)?;
            if !loss.is_finite() {
                return Err(NetError::Divergence { epoch, step, loss });
            }
            adam.update(&mut model, &grads, lr);
            sum += loss;
        }
        let val_loss = evaluate(&model, &val)?;
        if !val_loss.is_finite() {
            return Err(NetError::Divergence {
                epoch,
                step: cfg.steps_per_epoch,
                loss: val_loss,
            });
        }
        let train_loss = sum / cfg.steps_per_epoch as f64;
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = model.flat_params();
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            learning_rate: lr,
        });
        info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.2e}");
        schedule.observe(val_loss);
    }

    model.set_flat_params(&best)?;
    Ok(Checkpoint::new(
        &model,
        cfg.clone(),
        history,
        Provenance {
            dataset_sha256: sampler.dataset_hash(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        TrainConfig::paper().validate(32).unwrap();
        TrainConfig::desk().validate(8).unwrap();
        assert!(TrainConfig { patch_size: 100, ..TrainConfig::paper() }.validate(32).is_err());
        assert!(TrainConfig { validation_fraction: 0.5, ..TrainConfig::desk() }.validate(8).is_err());
        assert!(TrainConfig { learning_rate: f64::NAN, ..TrainConfig::desk() }.validate(8).is_err());
    }
}
