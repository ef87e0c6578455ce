//! Photon gain from the mean–variance relation of shot noise.
//!
//! For Poisson noise scaled by `1/gain`, a flat patch has
//! `variance = mean / gain`. Means and sample variances of non-overlapping
//! square patches are fitted by least absolute deviations through the
//! origin, which is the weighted median of `variance/mean` with weights
//! `mean`. Structure inside a patch only inflates its variance, so the
//! robust fit tolerates a minority of textured patches.

use contrast_core::Volume;
use log::warn;

use crate::error::{HarnessError, Result};

pub const MIN_PATCHES: usize = 100;

/// `(mean, variance)` of every full `patch × patch` block with positive mean.
pub fn patch_statistics(volume: &Volume, patch: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for plane in volume.planes() {
        let px = plane.pixels();
        let (h, w) = px.dim();
        for r in (0..h.saturating_sub(patch - 1)).step_by(patch) {
            for c in (0..w.saturating_sub(patch - 1)).step_by(patch) {
                let block = px.slice(ndarray::s![r..r + patch, c..c + patch]);
                let n = (patch * patch) as f64;
                let m = block.iter().map(|&v| v as f64).sum::<f64>() / n;
                let var = block.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / (n - 1.0);
                if m > 0.0 {
                    out.push((m, var));
                }
            }
        }
    }
    out
}

/// Minimizer of `Σ |vᵢ − c·mᵢ|` over `c`.
pub fn lad_slope_through_origin(points: &[(f64, f64)]) -> Option<f64> {
    let mut ratios: Vec<(f64, f64)> = points.iter().filter(|p| p.0 > 0.0).map(|&(m, v)| (v / m, m)).collect();
    if ratios.is_empty() {
        return None;
    }
    ratios.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = ratios.iter().map(|r| r.1).sum();
    let mut acc = 0.0;
    for (ratio, weight) in &ratios {
        acc += weight;
        if acc >= total / 2.0 {
            return Some(*ratio);
        }
    }
    ratios.last().map(|r| r.0)
}

/// Suggested gain (photons per intensity unit) for `volume`.
pub fn estimate_gain(volume: &Volume, patch: usize) -> Result<f64> {
    if patch < 2 {
        return Err(HarnessError::InvalidParameter(format!("patch must be >= 2, got {patch}")));
    }
    let stats = patch_statistics(volume, patch);
    if stats.len() < MIN_PATCHES {
        return Err(HarnessError::InvalidParameter(format!(
            "only {} patches of {patch}×{patch} available, need {MIN_PATCHES}",
            stats.len()
        )));
    }
    if stats.iter().all(|s| s.1 == 0.0) {
        return Err(HarnessError::DegenerateFit("every patch is constant; the data look noiseless".into()));
    }
    let slope = lad_slope_through_origin(&stats).expect("non-empty statistics");
    if slope <= 0.0 {
        warn!("median patch variance is zero; reporting infinite gain");
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / slope)
}
