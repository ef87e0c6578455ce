//! Plane and volume containers plus the percentile and normalization
//! utilities every other module builds on.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted side length of a plane.
pub const MIN_PLANE_SIDE: usize = 16;

/// Default lateral voxel size in micrometres.
pub const DEFAULT_VOXEL_SIZE_UM: f64 = 0.3;

/// Default lower normalization percentile.
pub const DEFAULT_LO_PERCENTILE: f64 = 2.0;

/// Default upper normalization percentile.
pub const DEFAULT_HI_PERCENTILE: f64 = 99.8;

/// A single 2D slice of a volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pixels: Array2<f32>,
    depth_index: usize,
    voxel_size_um: f64,
}

impl Plane {
    /// Wraps a pixel array, rejecting planes smaller than 16×16 or holding
    /// non-finite values.
    pub fn new(pixels: Array2<f32>, depth_index: usize) -> Result<Self> {
        let (h, w) = pixels.dim();
        if h < MIN_PLANE_SIDE || w < MIN_PLANE_SIDE {
            return Err(Error::InvalidPlane(format!(
                "{h}x{w} is smaller than {MIN_PLANE_SIDE}x{MIN_PLANE_SIDE}"
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidPlane(format!("non-finite pixel {v}")));
        }
        Ok(Self {
            pixels,
            depth_index,
            voxel_size_um: DEFAULT_VOXEL_SIZE_UM,
        })
    }

    /// Like [`Plane::new`] but additionally requires all pixels to be
    /// non-negative, as raw detector data is.
    pub fn new_raw(pixels: Array2<f32>, depth_index: usize) -> Result<Self> {
        let plane = Self::new(pixels, depth_index)?;
        if let Some(v) = plane.pixels.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidPlane(format!("negative raw pixel {v}")));
        }
        Ok(plane)
    }

    pub fn with_voxel_size(mut self, voxel_size_um: f64) -> Self {
        self.voxel_size_um = voxel_size_um;
        self
    }

    pub fn pixels(&self) -> &Array2<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f32> {
        self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn depth_index(&self) -> usize {
        self.depth_index
    }

    pub fn voxel_size_um(&self) -> f64 {
        self.voxel_size_um
    }

    /// Returns a plane with the same depth/voxel metadata and new pixels.
    ///
    /// Fails if the new pixels contain non-finite values or the wrong shape
    /// for a plane.
    pub fn with_pixels(&self, pixels: Array2<f32>) -> Result<Self> {
        Ok(Self::new(pixels, self.depth_index)?.with_voxel_size(self.voxel_size_um))
    }

    /// Pixel values widened to f64, row-major.
    pub fn values_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&v| v as f64).collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.pixels.iter().all(|&v| v >= 0.0)
    }
}

/// An ordered stack of equally sized planes; depth index equals position.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    planes: Vec<Plane>,
    depth_step_um: f64,
}

impl Volume {
    pub fn new(planes: Vec<Plane>, depth_step_um: f64) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidVolume("volume has no planes".into()))?;
        let dim = first.dim();
        for (i, p) in planes.iter().enumerate() {
            if p.dim() != dim {
                return Err(Error::InvalidVolume(format!(
                    "plane {i} is {:?}, expected {dim:?}",
                    p.dim()
                )));
            }
            if p.depth_index() != i {
                return Err(Error::InvalidVolume(format!(
                    "plane at position {i} has depth index {}",
                    p.depth_index()
                )));
            }
        }
        Ok(Self {
            planes,
            depth_step_um,
        })
    }

    /// Builds a volume from raw arrays, assigning depth indices by position.
    pub fn from_arrays(arrays: Vec<Array2<f32>>) -> Result<Self> {
        let planes = arrays
            .into_iter()
            .enumerate()
            .map(|(i, a)| Plane::new(a, i))
            .collect::<Result<Vec<_>>>()?;
        Self::new(planes, DEFAULT_VOXEL_SIZE_UM)
    }

    /// Replaces the pixels of every plane, keeping metadata.
    pub fn map_planes<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&Plane) -> Result<Array2<f32>>,
    {
        let planes = self
            .planes
            .iter()
            .map(|p| p.with_pixels(f(p)?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(planes, self.depth_step_um)
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn plane(&self, z: usize) -> &Plane {
        &self.planes[z]
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    /// (height, width) shared by every plane.
    pub fn plane_dim(&self) -> (usize, usize) {
        self.planes[0].dim()
    }

    pub fn depth_step_um(&self) -> f64 {
        self.depth_step_um
    }

    pub fn into_planes(self) -> Vec<Plane> {
        self.planes
    }
}

/// Affine map used to bring a plane into (roughly) the unit range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    /// Intensity mapped to 0.
    pub lo: f64,
    /// Intensity mapped to 1.
    pub hi: f64,
    pub lo_percentile: f64,
    pub hi_percentile: f64,
}

impl NormalizationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.hi > self.lo) {
            return Err(Error::ConstantPlane);
        }
        if !(0.0 <= self.lo_percentile
            && self.lo_percentile < self.hi_percentile
            && self.hi_percentile <= 100.0)
        {
            return Err(Error::InvalidParameter(format!(
                "percentiles must satisfy 0 <= lo < hi <= 100, got {} and {}",
                self.lo_percentile, self.hi_percentile
            )));
        }
        Ok(())
    }

    pub fn range(&self) -> f64 {
        self.hi - self.lo
    }

    /// Percentile params of `plane`.
    pub fn from_plane(plane: &Plane, lo_pct: f64, hi_pct: f64) -> Result<Self> {
        Self::from_values(&plane.values_f64(), lo_pct, hi_pct)
    }

    pub fn from_values(values: &[f64], lo_pct: f64, hi_pct: f64) -> Result<Self> {
        if !(0.0 <= lo_pct && lo_pct < hi_pct && hi_pct <= 100.0) {
            return Err(Error::InvalidParameter(format!(
                "percentiles must satisfy 0 <= lo < hi <= 100, got {lo_pct} and {hi_pct}"
            )));
        }
        let mut sorted = values.to_vec();
        sort_values(&mut sorted)?;
        let params = Self {
            lo: percentile_of_sorted(&sorted, lo_pct),
            hi: percentile_of_sorted(&sorted, hi_pct),
            lo_percentile: lo_pct,
            hi_percentile: hi_pct,
        };
        params.validate()?;
        Ok(params)
    }

    /// (x - lo) / (hi - lo), unclipped.
    pub fn apply(&self, pixels: &Array2<f32>) -> Array2<f32> {
        let (lo, scale) = (self.lo, 1.0 / self.range());
        pixels.mapv(|v| ((v as f64 - lo) * scale) as f32)
    }

    /// x · (hi - lo) + lo.
    pub fn invert(&self, pixels: &Array2<f32>) -> Array2<f32> {
        let (lo, range) = (self.lo, self.range());
        pixels.mapv(|v| (v as f64 * range + lo) as f32)
    }
}

fn sort_values(values: &mut [f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite value in percentile input".into()));
    }
    values.sort_unstable_by(f64::total_cmp);
    Ok(())
}

/// Linear-interpolation percentile of an already sorted, non-empty slice.
///
/// The fractional rank is `p/100 · (n-1)`.
pub fn percentile_of_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lower = rank.floor() as usize;
    let upper = (lower + 1).min(n - 1);
    let frac = rank - lower as f64;
    if frac == 0.0 {
        sorted[lower]
    } else {
        sorted[lower] + frac * (sorted[upper] - sorted[lower])
    }
}

/// Linear-interpolation percentile (closest-rank interpolation, p = 50 is the
/// median).
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    Ok(percentiles(values, &[p])?[0])
}

/// Several percentiles of the same data with a single sort.
pub fn percentiles(values: &[f64], ps: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = ps.iter().find(|p| !(0.0..=100.0).contains(*p)) {
        return Err(Error::InvalidParameter(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sort_values(&mut sorted)?;
    Ok(ps.iter().map(|&p| percentile_of_sorted(&sorted, p)).collect())
}

/// Percentile normalization of a single plane.
///
/// Values outside the percentile range map outside [0, 1]; nothing is
/// clipped. The returned params invert the mapping.
pub fn normalize(plane: &Plane, lo_pct: f64, hi_pct: f64) -> Result<(Plane, NormalizationParams)> {
    let params = NormalizationParams::from_plane(plane, lo_pct, hi_pct)?;
    Ok((plane.with_pixels(params.apply(plane.pixels()))?, params))
}

pub fn denormalize(plane: &Plane, params: &NormalizationParams) -> Result<Plane> {
    params.validate()?;
    plane.with_pixels(params.invert(plane.pixels()))
}
