//! Threshold segmentation and the iteration sweep that picks how many
//! enhancement passes give the best agreement with ground-truth masks.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{percentile_of_sorted, Plane, Volume};
use crate::metrics::mask::{iou_from_counts, SegmentationMask};
use crate::metrics::stats::mean;

pub const DEFAULT_THRESHOLD_GRID: usize = 256;

/// Pixels `>= t`.
pub fn threshold_mask(plane: &Plane, t: f64) -> SegmentationMask {
    threshold_array(plane.pixels(), t)
}

pub fn threshold_array(pixels: &Array2<f32>, t: f64) -> SegmentationMask {
    SegmentationMask::new(pixels.mapv(|v| v as f64 >= t))
}

/// Evenly spaced thresholds from the 1st to the 99th pixel percentile.
pub fn threshold_grid(sorted: &[f64], n_grid: usize) -> Vec<f64> {
    let lo = percentile_of_sorted(sorted, 1.0);
    let hi = percentile_of_sorted(sorted, 99.0);
    if hi <= lo {
        return vec![lo];
    }
    (0..n_grid)
        .map(|i| lo + (hi - lo) * i as f64 / (n_grid - 1) as f64)
        .collect()
}

/// Best IoU over the threshold grid: `(threshold, iou)`, ties resolved to
/// the smallest threshold.
///
/// A plane whose 1st and 99th percentiles coincide gets a single-point grid.
pub fn best_threshold_iou(plane: &Plane, gt: &SegmentationMask, n_grid: usize) -> Result<(f64, f64)> {
    if plane.dim() != gt.dim() {
        return Err(Error::ShapeMismatch(plane.dim(), gt.dim()));
    }
    if n_grid < 2 {
        return Err(Error::InvalidParameter(format!("n_grid must be >= 2, got {n_grid}")));
    }
    let mut all: Vec<f64> = plane.values_f64();
    all.sort_unstable_by(f64::total_cmp);
    let mut fg: Vec<f64> = plane
        .pixels()
        .iter()
        .zip(gt.pixels().iter())
        .filter(|(_, &g)| g)
        .map(|(&v, _)| v as f64)
        .collect();
    fg.sort_unstable_by(f64::total_cmp);
    let n_gt = fg.len();

    // Count of sorted values >= t.
    let at_or_above = |sorted: &[f64], t: f64| sorted.len() - sorted.partition_point(|&v| v < t);

    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for t in threshold_grid(&all, n_grid) {
        let predicted = at_or_above(&all, t);
        let inter = at_or_above(&fg, t);
        let union = predicted + n_gt - inter;
        let score = iou_from_counts(inter, union);
        if score > best.1 {
            best = (t, score);
        }
    }
    Ok(best)
}

/// Summary of one enhancement level `k` (0 = raw).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationScore {
    pub k: usize,
    pub mean_iou: f64,
    /// Best threshold per plane.
    pub best_thresholds: Vec<f64>,
    /// Best IoU per plane.
    pub iou_distribution: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub per_k: Vec<IterationScore>,
    /// argmax of mean IoU, ties toward smaller k.
    pub selected_k: usize,
}

/// Per-plane best-threshold IoU for every enhancement level.
///
/// `volumes_by_k[k]` is the stack after `k` passes (index 0 is the raw
/// stack); `gt_masks` holds one mask per plane.
pub fn iteration_sweep(volumes_by_k: &[Volume], gt_masks: &[SegmentationMask], n_grid: usize) -> Result<SweepResult> {
    if volumes_by_k.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut per_k = Vec::with_capacity(volumes_by_k.len());
    for (k, volume) in volumes_by_k.iter().enumerate() {
        if volume.len() != gt_masks.len() {
            return Err(Error::InvalidVolume(format!(
                "variant k={k} has {} planes but {} masks were given",
                volume.len(),
                gt_masks.len()
            )));
        }
        let scores = volume
            .planes()
            .iter()
            .zip(gt_masks)
            .map(|(p, m)| best_threshold_iou(p, m, n_grid))
            .collect::<Result<Vec<_>>>()?;
        let ious: Vec<f64> = scores.iter().map(|s| s.1).collect();
        per_k.push(IterationScore {
            k,
            mean_iou: mean(&ious),
            best_thresholds: scores.iter().map(|s| s.0).collect(),
            iou_distribution: ious,
        });
    }
    let selected_k = per_k
        .iter()
        .fold((0usize, f64::NEG_INFINITY), |best, s| if s.mean_iou > best.1 { (s.k, s.mean_iou) } else { best })
        .0;
    Ok(SweepResult { per_k, selected_k })
}

impl SweepResult {
    /// `k,plane,threshold,iou` rows for violin-style plots.
    pub fn per_plane_csv(&self) -> String {
        let mut s = String::from("k,plane,threshold,iou\n");
        for score in &self.per_k {
            for (z, (t, v)) in score.best_thresholds.iter().zip(&score.iou_distribution).enumerate() {
                s.push_str(&format!("{},{},{},{}\n", score.k, z, t, v));
            }
        }
        s
    }

    pub fn mean_iou(&self, k: usize) -> Option<f64> {
        self.per_k.get(k).map(|s| s.mean_iou)
    }
}
