//! Synthetic cell-border volumes with exact ground truth.
//!
//! Each slice is a Voronoi tessellation whose cell borders are bright bands
//! on a dim background. Seed points drift slowly from slice to slice, so the
//! borders form coherent 3D sheets. A pseudo-raw counterpart emulates
//! depth-dependent image decay with increasing blur, attenuation, and
//! Poisson noise.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::{gaussian_blur_array, poisson_noise_array};
use crate::error::{Error, Result};
use crate::image::{Plane, Volume, DEFAULT_VOXEL_SIZE_UM};
use crate::metrics::mask::SegmentationMask;
use crate::rng::{seeded, substream, Pass};

/// Smoothing applied to clean slices after the borders are painted.
pub const CLEAN_SMOOTHING_SIGMA: f64 = 1.0;

/// Blur at the most superficial pseudo-raw slice.
pub const PSEUDO_RAW_TOP_SIGMA: f64 = 0.5;

/// Noise stream used by [`apply_pseudo_raw`].
const PSEUDO_RAW_PASS: Pass = Pass(16);

/// Maximum per-slice seed displacement in pixels.
const SEED_DRIFT_PX: f64 = 0.35;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub width: usize,
    pub height: usize,
    pub n_slices: usize,
    /// Voronoi seeds per slice.
    pub n_cells: usize,
    /// Full width of a border band in pixels.
    pub border_width_px: f64,
    pub border_intensity: f64,
    pub background_intensity: f64,
    /// Pseudo-raw blur at the deepest slice.
    pub depth_blur_sigma_max: f64,
    /// Fractional signal loss at the deepest slice.
    pub depth_attenuation: f64,
    /// Photons per intensity unit for pseudo-raw noise.
    pub gain: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            n_slices: 32,
            n_cells: 24,
            border_width_px: 2.0,
            border_intensity: 100.0,
            background_intensity: 10.0,
            depth_blur_sigma_max: 3.0,
            depth_attenuation: 0.6,
            gain: 4.0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParameter(m));
        if self.width < 16 || self.height < 16 || self.n_slices < 1 {
            return fail(format!(
                "phantom must be at least 16x16x1, got {}x{}x{}",
                self.height, self.width, self.n_slices
            ));
        }
        if self.n_cells < 2 {
            return fail(format!("n_cells must be >= 2, got {}", self.n_cells));
        }
        if !(self.border_width_px >= 1.0) {
            return fail(format!("border_width_px must be >= 1, got {}", self.border_width_px));
        }
        if !(self.border_intensity > self.background_intensity && self.background_intensity >= 0.0) {
            return fail("need border_intensity > background_intensity >= 0".into());
        }
        if !(0.0..1.0).contains(&self.depth_attenuation) {
            return fail(format!("depth_attenuation must lie in [0, 1), got {}", self.depth_attenuation));
        }
        if !(self.depth_blur_sigma_max >= 0.0) || !(self.gain > 0.0) {
            return fail("depth_blur_sigma_max must be >= 0 and gain > 0".into());
        }
        Ok(())
    }

    /// Same configuration with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

type Point = (f64, f64);

fn collinear(points: &[Point]) -> bool {
    if points.len() < 3 {
        return points.len() == 2 && points[0] == points[1];
    }
    let (x0, y0) = points[0];
    let (x1, y1) = points[1];
    points[2..]
        .iter()
        .all(|&(x, y)| ((x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)).abs() < 1e-6)
}

/// Random seed points and per-seed drift velocities.
fn sample_seeds<R: Rng>(cfg: &PhantomConfig, rng: &mut R) -> (Vec<Point>, Vec<Point>) {
    loop {
        let seeds: Vec<Point> = (0..cfg.n_cells)
            .map(|_| (rng.random_range(0.0..cfg.height as f64), rng.random_range(0.0..cfg.width as f64)))
            .collect();
        if collinear(&seeds) {
            continue;
        }
        let velocity = (0..cfg.n_cells)
            .map(|_| {
                (
                    rng.random_range(-SEED_DRIFT_PX..SEED_DRIFT_PX),
                    rng.random_range(-SEED_DRIFT_PX..SEED_DRIFT_PX),
                )
            })
            .collect();
        return (seeds, velocity);
    }
}

/// Position reflected into `[0, extent)`.
fn bounce(v: f64, extent: f64) -> f64 {
    let period = 2.0 * extent;
    let m = v.rem_euclid(period);
    if m < extent {
        m
    } else {
        period - m
    }
}

/// Distance from `q` to the bisector between its two nearest seeds.
fn border_distance(q: Point, seeds: &[Point]) -> f64 {
    let (mut d1, mut d2) = (f64::INFINITY, f64::INFINITY);
    let (mut i1, mut i2) = (0, 0);
    for (k, &(y, x)) in seeds.iter().enumerate() {
        let d = (q.0 - y).powi(2) + (q.1 - x).powi(2);
        if d < d1 {
            d2 = d1;
            i2 = i1;
            d1 = d;
            i1 = k;
        } else if d < d2 {
            d2 = d;
            i2 = k;
        }
    }
    let (a, b) = (seeds[i1], seeds[i2]);
    let sep = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    if sep == 0.0 {
        return 0.0;
    }
    (d2 - d1) / (2.0 * sep)
}

/// Seeds at slice `z`.
pub fn seeds_at(cfg: &PhantomConfig, z: usize) -> Vec<(f64, f64)> {
    let (seeds, velocity) = sample_seeds(cfg, &mut seeded(cfg.seed));
    seeds
        .iter()
        .zip(&velocity)
        .map(|(&(y, x), &(vy, vx))| {
            (
                bounce(y + vy * z as f64, cfg.height as f64),
                bounce(x + vx * z as f64, cfg.width as f64),
            )
        })
        .collect()
}

/// Border mask of one slice: pixel centres within half a border width of a
/// Voronoi boundary.
pub fn border_mask(cfg: &PhantomConfig, seeds: &[Point]) -> Array2<bool> {
    let half = cfg.border_width_px / 2.0;
    Array2::from_shape_fn((cfg.height, cfg.width), |(i, j)| {
        border_distance((i as f64 + 0.5, j as f64 + 0.5), seeds) < half
    })
}

/// Clean volume and exact per-slice border masks.
pub fn generate_clean(cfg: &PhantomConfig) -> Result<(Volume, Vec<SegmentationMask>)> {
    cfg.validate()?;
    let mut planes = Vec::with_capacity(cfg.n_slices);
    let mut masks = Vec::with_capacity(cfg.n_slices);
    let (bg, fg) = (cfg.background_intensity as f32, cfg.border_intensity as f32);
    for z in 0..cfg.n_slices {
        let mask = border_mask(cfg, &seeds_at(cfg, z));
        let painted = mask.mapv(|b| if b { fg } else { bg });
        let smooth = gaussian_blur_array(painted.view(), CLEAN_SMOOTHING_SIGMA)?;
        planes.push(Plane::new(smooth, z)?);
        masks.push(SegmentationMask::new(mask));
    }
    Ok((Volume::new(planes, DEFAULT_VOXEL_SIZE_UM)?, masks))
}

/// Pseudo-raw blur at slice `z` of `n`.
pub fn pseudo_raw_sigma(cfg: &PhantomConfig, z: usize, n: usize) -> f64 {
    let top = PSEUDO_RAW_TOP_SIGMA.min(cfg.depth_blur_sigma_max);
    top + (cfg.depth_blur_sigma_max - top) * depth_fraction(z, n)
}

fn depth_fraction(z: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        z as f64 / (n - 1) as f64
    }
}

/// Depth-dependent blur, attenuation, and Poisson noise.
///
/// Slice `z` of `N` gets σ(z) ramping from 0.5 (or `depth_blur_sigma_max`
/// when smaller) to `depth_blur_sigma_max`, multiplicative attenuation
/// `1 − depth_attenuation·z/(N−1)`, then Poisson noise at `cfg.gain` drawn
/// from substream `(cfg.seed, 16, z)`.
pub fn apply_pseudo_raw(clean: &Volume, cfg: &PhantomConfig) -> Result<Volume> {
    cfg.validate()?;
    let n = clean.len();
    let planes = clean
        .planes()
        .iter()
        .map(|p| {
            let z = p.depth_index();
            let sigma = pseudo_raw_sigma(cfg, z, n);
            let blurred = if sigma > 0.0 {
                gaussian_blur_array(p.pixels().view(), sigma)?
            } else {
                p.pixels().clone()
            };
            let keep = (1.0 - cfg.depth_attenuation * depth_fraction(z, n)) as f32;
            let attenuated = blurred.mapv(|v| v * keep);
            let mut rng = substream(cfg.seed, PSEUDO_RAW_PASS, z);
            p.with_pixels(poisson_noise_array(attenuated.view(), cfg.gain, &mut rng)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Volume::new(planes, clean.depth_step_um())
}

/// A complete phantom: clean volume, its pseudo-raw counterpart, and masks.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub clean: Volume,
    pub raw: Volume,
    pub masks: Vec<SegmentationMask>,
}

pub fn generate(cfg: &PhantomConfig) -> Result<Phantom> {
    let (clean, masks) = generate_clean(cfg)?;
    let raw = apply_pseudo_raw(&clean, cfg)?;
    Ok(Phantom { clean, raw, masks })
}
