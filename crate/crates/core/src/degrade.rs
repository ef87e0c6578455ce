//! Forward degradation model: a blend of the image with a blurred,
//! Poisson-noised copy of itself,
//!
//! ```text
//! d(x) = α·x + (1 − α)·n(b(x))
//! ```
//!
//! with `b` a Gaussian blur and `n` Poisson sampling. α falls linearly with
//! slice depth so deeper slices receive more of the degraded copy.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Plane, Volume};
use crate::rng::{substream, Pass};

/// Rates above this are sampled from N(λ, λ) instead of an exact Poisson.
pub const GAUSSIAN_APPROX_RATE: f64 = 1e4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationConfig {
    /// Gaussian blur standard deviation in pixels.
    pub sigma_px: f64,
    /// Photons per intensity unit for Poisson sampling.
    pub gain: f64,
    /// α at depth index 0.
    pub alpha_top: f64,
    /// α at the deepest slice.
    pub alpha_bottom: f64,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            sigma_px: 20.0,
            gain: 0.1,
            alpha_top: 0.5,
            alpha_bottom: 0.3,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_px > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma_px must be > 0, got {}", self.sigma_px)));
        }
        if !(self.gain > 0.0) {
            return Err(Error::InvalidParameter(format!("gain must be > 0, got {}", self.gain)));
        }
        if !(0.0 <= self.alpha_bottom && self.alpha_bottom <= self.alpha_top && self.alpha_top <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= alpha_bottom <= alpha_top <= 1, got {} and {}",
                self.alpha_bottom, self.alpha_top
            )));
        }
        Ok(())
    }
}

/// Unit-sum sampled Gaussian truncated at radius `ceil(4σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`), valid
/// for any offset.
#[inline]
pub fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn convolve_lines(input: ArrayView2<f32>, kernel: &[f64], axis: Axis) -> Array2<f32> {
    let radius = (kernel.len() / 2) as i64;
    let mut out = Array2::<f32>::zeros(input.dim());
    let mut line = Vec::new();
    for (src, mut dst) in input.lanes(axis).into_iter().zip(out.lanes_mut(axis)) {
        let n = src.len();
        line.clear();
        line.extend((-radius..n as i64 + radius).map(|i| src[reflect_index(i, n)] as f64));
        for (i, d) in dst.iter_mut().enumerate() {
            let acc: f64 = kernel.iter().zip(&line[i..]).map(|(k, v)| k * v).sum();
            *d = acc as f32;
        }
    }
    out
}

/// 1D Gaussian along each row.
pub fn blur_rows(pixels: ArrayView2<f32>, sigma: f64) -> Array2<f32> {
    convolve_lines(pixels, &gaussian_kernel(sigma), Axis(1))
}

/// 1D Gaussian along each column.
pub fn blur_cols(pixels: ArrayView2<f32>, sigma: f64) -> Array2<f32> {
    convolve_lines(pixels, &gaussian_kernel(sigma), Axis(0))
}

/// Separable 2D Gaussian blur with reflect padding on a raw array.
pub fn gaussian_blur_array(pixels: ArrayView2<f32>, sigma: f64) -> Result<Array2<f32>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
    }
    let rows = blur_rows(pixels, sigma);
    Ok(blur_cols(rows.view(), sigma))
}

pub fn gaussian_blur(plane: &Plane, sigma_px: f64) -> Result<Plane> {
    plane.with_pixels(gaussian_blur_array(plane.pixels().view(), sigma_px)?)
}

/// Samples `Poisson(λ)` (or `N(λ, λ)` above [`GAUSSIAN_APPROX_RATE`]).
fn sample_count<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate <= 0.0 {
        0.0
    } else if rate > GAUSSIAN_APPROX_RATE {
        let normal = Normal::new(rate, rate.sqrt()).expect("finite rate");
        normal.sample(rng).round().max(0.0)
    } else {
        Poisson::new(rate).expect("positive finite rate").sample(rng)
    }
}

/// Poisson resampling of every pixel: `Poisson(pixel·gain)/gain`.
///
/// Negative pixels are clipped to zero first.
pub fn poisson_noise_array<R: Rng + ?Sized>(pixels: ArrayView2<f32>, gain: f64, rng: &mut R) -> Result<Array2<f32>> {
    if !(gain > 0.0) {
        return Err(Error::InvalidParameter(format!("gain must be > 0, got {gain}")));
    }
    let mut clipped = 0usize;
    let out = pixels.mapv(|v| {
        if v < 0.0 {
            clipped += 1;
        }
        let rate = (v.max(0.0) as f64) * gain;
        (sample_count(rate, rng) / gain) as f32
    });
    if clipped > 0 {
        log::debug!("poisson_noise: clipped {clipped} negative pixels to 0");
    }
    Ok(out)
}

pub fn poisson_noise<R: Rng + ?Sized>(plane: &Plane, gain: f64, rng: &mut R) -> Result<Plane> {
    plane.with_pixels(poisson_noise_array(plane.pixels().view(), gain, rng)?)
}

/// Linear α ramp from `alpha_top` (index 0) to `alpha_bottom` (last index).
pub fn alpha_schedule(n_slices: usize, alpha_top: f64, alpha_bottom: f64) -> Vec<f64> {
    match n_slices {
        0 => Vec::new(),
        1 => vec![alpha_top],
        n => (0..n)
            .map(|z| alpha_top - (alpha_top - alpha_bottom) * z as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// `alpha·x + (1 − alpha)·y`, evaluated in f32.
pub fn blend(x: &Array2<f32>, y: &Array2<f32>, alpha: f64) -> Array2<f32> {
    let a = alpha as f32;
    let b = 1.0 - a;
    let mut out = x.clone();
    out.zip_mut_with(y, |o, &n| *o = a * *o + b * n);
    out
}

/// Degrades one plane: blur, then Poisson noise, then blend with the input.
pub fn degrade_plane<R: Rng + ?Sized>(
    plane: &Plane,
    alpha: f64,
    cfg: &DegradationConfig,
    rng: &mut R,
) -> Result<Plane> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(plane.clone());
    }
    let blurred = gaussian_blur_array(plane.pixels().view(), cfg.sigma_px)?;
    let noisy = poisson_noise_array(blurred.view(), cfg.gain, rng)?;
    plane.with_pixels(blend(plane.pixels(), &noisy, alpha))
}

/// Degrades every plane with its scheduled α, drawing noise from the
/// substream `(cfg.seed, pass, depth_index)`.
pub fn degrade_volume_pass(volume: &Volume, cfg: &DegradationConfig, pass: Pass) -> Result<Volume> {
    cfg.validate()?;
    let alphas = alpha_schedule(volume.len(), cfg.alpha_top, cfg.alpha_bottom);
    let planes = volume
        .planes()
        .iter()
        .map(|p| {
            let mut rng = substream(cfg.seed, pass, p.depth_index());
            degrade_plane(p, alphas[p.depth_index()], cfg, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Volume::new(planes, volume.depth_step_um())
}

pub fn degrade_volume(volume: &Volume, cfg: &DegradationConfig) -> Result<Volume> {
    degrade_volume_pass(volume, cfg, Pass::FIRST)
}

/// Returns `(d(v), d(d(v)))`; the second application uses [`Pass::SECOND`].
pub fn double_degrade(volume: &Volume, cfg: &DegradationConfig) -> Result<(Volume, Volume)> {
    let once = degrade_volume_pass(volume, cfg, Pass::FIRST)?;
    let twice = degrade_volume_pass(&once, cfg, Pass::SECOND)?;
    Ok((once, twice))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn cfg(sigma: f64, gain: f64) -> DegradationConfig {
        DegradationConfig {
            sigma_px: sigma,
            gain,
            ..Default::default()
        }
    }

    fn random_plane(seed: u64, h: usize, w: usize) -> Plane {
        let mut rng = seeded(seed);
        Plane::new(Array2::from_shape_fn((h, w), |_| rng.random_range(0.0f32..1000.0)), 0).unwrap()
    }

    #[test]
    fn reflect_index_mirrors() {
        let idx: Vec<usize> = (-5..9).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![3, 3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0, 0]);
    }

    #[test]
    fn blur_constant_is_identity() {
        let p = Plane::new(Array2::from_elem((32, 40), 7.5), 0).unwrap();
        let b = gaussian_blur(&p, 20.0).unwrap();
        assert!(b.pixels().iter().all(|v| (v - 7.5).abs() < 1e-6 * 7.5));
    }

    #[test]
    fn blur_of_impulse_is_sampled_gaussian() {
        let n = 257;
        let mut a = Array2::zeros((n, n));
        a[[128, 128]] = 1.0;
        let p = Plane::new(a, 0).unwrap();
        let b = gaussian_blur(&p, 3.0).unwrap();
        // Oracle: exp(-(i²+j²)/2σ²) renormalized over the square support.
        let r = 12i64;
        let mut sum = 0.0;
        for i in -r..=r {
            for j in -r..=r {
                sum += (-((i * i + j * j) as f64) / 18.0).exp();
            }
        }
        for i in 0..n {
            for j in 0..n {
                let (di, dj) = (i as i64 - 128, j as i64 - 128);
                let want = if di.abs() <= r && dj.abs() <= r {
                    (-((di * di + dj * dj) as f64) / 18.0).exp() / sum
                } else {
                    0.0
                };
                assert!((b.pixels()[[i, j]] as f64 - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn blur_matches_direct_2d_convolution() {
        // Direct (non-separable) 2D convolution with reflect indexing.
        let p = random_plane(1, 20, 24);
        let sigma = 1.7;
        let k = gaussian_kernel(sigma);
        let r = (k.len() / 2) as i64;
        let got = gaussian_blur(&p, sigma).unwrap();
        let rows = blur_rows(p.pixels().view(), sigma);
        let sep = blur_cols(rows.view(), sigma);
        for i in 0..20 {
            for j in 0..24 {
                let mut acc = 0.0f64;
                for di in -r..=r {
                    for dj in -r..=r {
                        let v = p.pixels()[[reflect_index(i as i64 + di, 20), reflect_index(j as i64 + dj, 24)]];
                        acc += k[(di + r) as usize] * k[(dj + r) as usize] * v as f64;
                    }
                }
                assert!((got.pixels()[[i, j]] as f64 - acc).abs() < 1e-6 * acc.abs().max(1.0));
                assert!((got.pixels()[[i, j]] - sep[[i, j]]).abs() <= 1e-6 * acc.abs().max(1.0) as f32);
            }
        }
    }

    #[test]
    fn blur_preserves_total_intensity() {
        for (seed, sigma) in [(2, 1.0), (3, 5.0), (4, 20.0), (5, 40.0)] {
            let p = random_plane(seed, 48, 64);
            let b = gaussian_blur(&p, sigma).unwrap();
            let s0: f64 = p.values_f64().iter().sum();
            let s1: f64 = b.values_f64().iter().sum();
            assert!(((s1 - s0) / s0).abs() < 1e-4, "sigma {sigma}: {s0} vs {s1}");
        }
    }

    #[test]
    fn blur_rejects_bad_sigma() {
        assert!(gaussian_blur(&random_plane(1, 16, 16), 0.0).is_err());
    }

    #[test]
    fn poisson_zero_plane() {
        let p = Plane::new(Array2::zeros((16, 16)), 0).unwrap();
        let out = poisson_noise(&p, 1.0, &mut seeded(1)).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_moments() {
        let p = Plane::new(Array2::from_elem((1000, 1000), 100.0), 0).unwrap();
        let out = poisson_noise(&p, 1.0, &mut seeded(42)).unwrap();
        let v = out.values_f64();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 100.0).abs() < 0.5, "mean {mean}");
        assert!((var - 100.0).abs() < 2.0, "var {var}");
    }

    #[test]
    fn poisson_is_deterministic_and_validates_gain() {
        let p = random_plane(9, 32, 32);
        let a = poisson_noise(&p, 0.3, &mut seeded(5)).unwrap();
        let b = poisson_noise(&p, 0.3, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
        assert!(poisson_noise(&p, 0.0, &mut seeded(5)).is_err());
        assert!(poisson_noise(&p, -1.0, &mut seeded(5)).is_err());
    }

    #[test]
    fn poisson_clips_negative_input() {
        let p = Plane::new(Array2::from_elem((16, 16), -4.0), 0).unwrap();
        let out = poisson_noise(&p, 1.0, &mut seeded(1)).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn alpha_schedule_examples() {
        let s = alpha_schedule(3, 0.5, 0.3);
        assert_eq!(s.len(), 3);
        for (a, b) in s.iter().zip([0.5, 0.4, 0.3]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(alpha_schedule(1, 0.5, 0.3), vec![0.5]);
        assert_eq!(alpha_schedule(5, 0.5, 0.5), vec![0.5; 5]);
    }

    #[test]
    fn degrade_alpha_one_is_identity() {
        let p = random_plane(3, 32, 32);
        let out = degrade_plane(&p, 1.0, &cfg(20.0, 0.1), &mut seeded(1)).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn degrade_alpha_zero_large_gain_is_blur() {
        let p = random_plane(4, 32, 32);
        let out = degrade_plane(&p, 0.0, &cfg(5.0, 1e9), &mut seeded(1)).unwrap();
        let b = gaussian_blur(&p, 5.0).unwrap();
        for (o, e) in out.pixels().iter().zip(b.pixels()) {
            assert!(((o - e) / e).abs() < 1e-3);
        }
    }

    #[test]
    fn degrade_equals_manual_composition() {
        let p = random_plane(5, 40, 36);
        let c = cfg(4.0, 0.2);
        for alpha in [0.0, 0.25, 0.5] {
            let out = degrade_plane(&p, alpha, &c, &mut seeded(77)).unwrap();
            let blurred = gaussian_blur(&p, c.sigma_px).unwrap();
            let noisy = poisson_noise(&blurred, c.gain, &mut seeded(77)).unwrap();
            let a = alpha as f32;
            let manual = Array2::from_shape_fn(p.dim(), |ij| a * p.pixels()[ij] + (1.0 - a) * noisy.pixels()[ij]);
            assert!(out.pixels().iter().zip(&manual).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn degrade_rejects_bad_alpha() {
        let p = random_plane(5, 16, 16);
        assert!(degrade_plane(&p, 1.5, &cfg(4.0, 0.2), &mut seeded(1)).is_err());
    }

    fn volume(n: usize) -> Volume {
        Volume::from_arrays((0..n).map(|i| random_plane(i as u64 + 10, 32, 32).into_pixels()).collect()).unwrap()
    }

    #[test]
    fn degrade_single_slice_uses_alpha_top() {
        let v = volume(1);
        let c = cfg(3.0, 0.5);
        let out = degrade_volume(&v, &c).unwrap();
        let manual = degrade_plane(v.plane(0), c.alpha_top, &c, &mut substream(c.seed, Pass::FIRST, 0)).unwrap();
        assert_eq!(out.plane(0), &manual);
    }

    #[test]
    fn degrade_volume_is_order_independent() {
        let v = volume(4);
        let c = cfg(3.0, 0.5);
        let out = degrade_volume(&v, &c).unwrap();
        let alphas = alpha_schedule(4, c.alpha_top, c.alpha_bottom);
        for z in [3usize, 1, 0, 2] {
            let p = degrade_plane(v.plane(z), alphas[z], &c, &mut substream(c.seed, Pass::FIRST, z)).unwrap();
            assert_eq!(&p, out.plane(z));
        }
        assert_eq!(out, degrade_volume(&v, &c).unwrap());
    }

    #[test]
    fn double_degrade_composition() {
        let v = volume(3);
        let c = cfg(3.0, 0.5);
        let (d, e) = double_degrade(&v, &c).unwrap();
        assert_eq!(d, degrade_volume(&v, &c).unwrap());
        assert_eq!(e, degrade_volume_pass(&d, &c, Pass::SECOND).unwrap());
        assert_ne!(e, degrade_volume(&d, &c).unwrap());

        let identity = DegradationConfig {
            alpha_top: 1.0,
            alpha_bottom: 1.0,
            ..c
        };
        let (d, e) = double_degrade(&v, &identity).unwrap();
        assert_eq!(d, v);
        assert_eq!(e, v);
    }

    #[test]
    fn config_validation() {
        assert!(DegradationConfig::default().validate().is_ok());
        let bad = DegradationConfig {
            alpha_top: 0.2,
            alpha_bottom: 0.3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(cfg(-1.0, 1.0).validate().is_err());
        assert!(cfg(1.0, 0.0).validate().is_err());
    }
}
