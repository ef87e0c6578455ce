//! Log-ratio contrast indices.
//!
//! Both indices use the natural log of the 95th over the 50th percentile:
//! of pooled absolute Haar detail coefficients (wavelet contrast index) or
//! of pixel intensities (percentile contrast index). Both are invariant to
//! positive scaling of the image.

use crate::error::{Error, Result};
use crate::image::{percentiles, Plane};
use crate::metrics::wavelet::haar_dwt2;

/// Decomposition depth used for the wavelet contrast index.
pub const WCI_LEVELS: usize = 4;

/// Absolute detail coefficients of levels 1..=`levels`, approximation band
/// excluded.
pub fn pooled_detail_magnitudes(plane: &Plane, levels: usize) -> Result<Vec<f64>> {
    let x = plane.pixels().mapv(|v| v as f64);
    let dec = haar_dwt2(x.view(), levels)?;
    Ok(dec.details().map(|c| c.abs()).collect())
}

/// `ln(P95 / P50)` of a population of non-negative magnitudes.
pub fn coefficient_contrast(magnitudes: &[f64]) -> Result<f64> {
    let q = percentiles(magnitudes, &[95.0, 50.0])?;
    if q[1] <= 0.0 {
        return Err(Error::DegenerateContrast);
    }
    Ok((q[0] / q[1]).ln())
}

pub fn wci(plane: &Plane) -> Result<f64> {
    coefficient_contrast(&pooled_detail_magnitudes(plane, WCI_LEVELS)?)
}

pub fn pci(plane: &Plane) -> Result<f64> {
    let q = percentiles(&plane.values_f64(), &[95.0, 50.0])?;
    if q[1] <= 0.0 {
        return Err(Error::NonPositiveMedian);
    }
    Ok((q[0] / q[1]).ln())
}
