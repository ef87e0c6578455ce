//! Adam and a reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::real::Real;
use crate::unet::{Gradients, Unet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n_params: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. A zero learning rate leaves every
    /// parameter bit-identical.
    pub fn update<F: Real>(&mut self, model: &mut Unet<F>, grads: &Gradients<F>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, epsilon } = self.cfg;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (m, v) = (&mut self.m, &mut self.v);
        model.for_each_param_mut(grads, |i, p, g| {
            let g = g.to_f64().unwrap();
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            if lr != 0.0 {
                let delta = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
                *p = F::of(p.to_f64().unwrap() - delta);
            }
        });
    }
}

/// Halves (by `factor`) the learning rate after `patience` epochs without a
/// new best validation loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    lr: f64,
    best: f64,
    wait: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            min_lr: 0.0,
            lr,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records an epoch's validation loss; returns the learning rate for the
    /// next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.wait = 0;
            }
        }
        self.lr
    }
}
