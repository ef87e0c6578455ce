//! Random co-located patch pairs from (degraded, target) volumes.

use contrast_core::image::{DEFAULT_HI_PERCENTILE, DEFAULT_LO_PERCENTILE};
use contrast_core::{NormalizationParams, Volume};
use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{NetError, Result};
use crate::tensor::Tensor;
use crate::train::TrainConfig;

/// A batch of single-channel patches, stored as `(batch, 1, p, p)` which has
/// the same memory layout as `(batch, p, p, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Tensor<f32>,
    pub targets: Tensor<f32>,
}

impl Batch {
    /// `(batch_size, patch_size, patch_size, 1)`.
    pub fn shape(&self) -> [usize; 4] {
        [self.inputs.n, self.inputs.h, self.inputs.w, 1]
    }
}

/// Where a patch was cut from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CropPosition {
    pub plane: usize,
    pub row: usize,
    pub col: usize,
    /// Dihedral transform index in 0..8 (0 when augmentation is off).
    pub transform: u8,
}

struct PlanePair {
    input: Array2<f32>,
    target: Array2<f32>,
}

pub struct PatchSampler {
    planes: Vec<PlanePair>,
    train_planes: Vec<usize>,
    val_planes: Vec<usize>,
    patch: usize,
    batch: usize,
    augment: bool,
    seed: u64,
    rng: ChaCha8Rng,
    dataset_hash: String,
}

const TRAIN_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const VAL_STREAM: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl PatchSampler {
    /// Normalizes each plane pair with the degraded plane's percentile
    /// params and holds out `validation_fraction` of the planes (at least
    /// one) for validation. With a single plane, training and validation
    /// share it.
    pub fn new(pairs: &[(Volume, Volume)], cfg: &TrainConfig) -> Result<Self> {
        let mut planes = Vec::new();
        for (degraded, target) in pairs {
            if degraded.len() != target.len() || degraded.plane_dim() != target.plane_dim() {
                return Err(NetError::Image(contrast_core::Error::ShapeMismatch(
                    degraded.plane_dim(),
                    target.plane_dim(),
                )));
            }
            let (h, w) = degraded.plane_dim();
            if h < cfg.patch_size || w < cfg.patch_size {
                return Err(NetError::PlaneTooSmall {
                    plane: (h, w),
                    patch: cfg.patch_size,
                });
            }
            for (d, t) in degraded.planes().iter().zip(target.planes()) {
                let params = NormalizationParams::from_plane(d, DEFAULT_LO_PERCENTILE, DEFAULT_HI_PERCENTILE)?;
                planes.push(PlanePair {
                    input: params.apply(d.pixels()),
                    target: params.apply(t.pixels()),
                });
            }
        }
        if planes.is_empty() {
            return Err(NetError::InvalidConfig("no training planes".into()));
        }

        let mut order: Vec<usize> = (0..planes.len()).collect();
        let mut split_rng = stream_rng(cfg.seed, SPLIT_STREAM);
        for i in (1..order.len()).rev() {
            order.swap(i, split_rng.random_range(0..=i));
        }
        let (train_planes, val_planes) = if planes.len() == 1 {
            (vec![0], vec![0])
        } else {
            let n_val = ((planes.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, planes.len() - 1);
            let mut val = order[..n_val].to_vec();
            let mut train = order[n_val..].to_vec();
            val.sort_unstable();
            train.sort_unstable();
            (train, val)
        };

        let dataset_hash = hash_planes(&planes);
        Ok(Self {
            planes,
            train_planes,
            val_planes,
            patch: cfg.patch_size,
            batch: cfg.batch_size,
            augment: cfg.augment,
            seed: cfg.seed,
            rng: stream_rng(cfg.seed, TRAIN_STREAM),
            dataset_hash,
        })
    }

    pub fn n_planes(&self) -> usize {
        self.planes.len()
    }

    /// SHA-256 (hex) of the normalized training pairs.
    pub fn dataset_hash(&self) -> String {
        self.dataset_hash.clone()
    }

    pub fn train_planes(&self) -> &[usize] {
        &self.train_planes
    }

    pub fn validation_planes(&self) -> &[usize] {
        &self.val_planes
    }

    fn draw(rng: &mut ChaCha8Rng, planes: &[PlanePair], pool: &[usize], patch: usize, augment: bool) -> CropPosition {
        let plane = pool[rng.random_range(0..pool.len())];
        let (h, w) = planes[plane].input.dim();
        CropPosition {
            plane,
            row: rng.random_range(0..=h - patch),
            col: rng.random_range(0..=w - patch),
            transform: if augment { rng.random_range(0..8) } else { 0 },
        }
    }

    /// Next training crop position (advances the stream).
    pub fn next_position(&mut self) -> CropPosition {
        Self::draw(&mut self.rng, &self.planes, &self.train_planes, self.patch, self.augment)
    }

    fn assemble(&self, positions: &[CropPosition]) -> Batch {
        let p = self.patch;
        let n = positions.len();
        let mut inputs = Tensor::zeros(n, 1, p, p);
        let mut targets = Tensor::zeros(n, 1, p, p);
        for (i, pos) in positions.iter().enumerate() {
            let pair = &self.planes[pos.plane];
            let window = s![pos.row..pos.row + p, pos.col..pos.col + p];
            write_patch(pair.input.slice(window), pos.transform, inputs.sample_mut(i));
            write_patch(pair.target.slice(window), pos.transform, targets.sample_mut(i));
        }
        Batch { inputs, targets }
    }

    pub fn next_batch(&mut self) -> Batch {
        let positions: Vec<CropPosition> = (0..self.batch).map(|_| self.next_position()).collect();
        self.assemble(&positions)
    }

    /// Fixed validation set of `n_patches` crops from the held-out planes,
    /// split into batches. Depends only on the seed.
    pub fn validation_batches(&self, n_patches: usize) -> Vec<Batch> {
        let mut rng = stream_rng(self.seed, VAL_STREAM);
        let positions: Vec<CropPosition> = (0..n_patches)
            .map(|_| Self::draw(&mut rng, &self.planes, &self.val_planes, self.patch, false))
            .collect();
        positions.chunks(self.batch.max(1)).map(|c| self.assemble(c)).collect()
    }
}

fn hash_planes(planes: &[PlanePair]) -> String {
    let mut hasher = Sha256::new();
    for p in planes {
        for a in [&p.input, &p.target] {
            let (h, w) = a.dim();
            hasher.update((h as u64).to_le_bytes());
            hasher.update((w as u64).to_le_bytes());
            for v in a.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
    }
    crate::checkpoint::hex(&hasher.finalize())
}

/// Copies a patch under one of the eight square symmetries.
fn write_patch(src: ArrayView2<f32>, transform: u8, out: &mut [f32]) {
    let p = src.nrows();
    for i in 0..p {
        for j in 0..p {
            let (mut r, mut c) = (i, j);
            if transform & 4 != 0 {
                std::mem::swap(&mut r, &mut c);
            }
            if transform & 1 != 0 {
                r = p - 1 - r;
            }
            if transform & 2 != 0 {
                c = p - 1 - c;
            }
            out[i * p + j] = src[[r, c]];
        }
    }
}
