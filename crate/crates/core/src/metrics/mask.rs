use ndarray::Array2;

use crate::error::{Error, Result};

/// Binary per-plane mask, pixel-aligned with its source plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMask {
    pixels: Array2<bool>,
}

impl SegmentationMask {
    pub fn new(pixels: Array2<bool>) -> Self {
        Self { pixels }
    }

    pub fn pixels(&self) -> &Array2<bool> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<bool> {
        self.pixels
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.pixels.len() as f64
    }
}

/// Intersection and union pixel counts.
pub fn overlap_counts(a: &SegmentationMask, b: &SegmentationMask) -> Result<(usize, usize)> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(a.dim(), b.dim()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.pixels.iter().zip(b.pixels.iter()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok((inter, union))
}

/// `|a ∧ b| / |a ∨ b|`, with the convention that two empty masks score 1.
pub fn iou_from_counts(intersection: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    }
}

pub fn iou(a: &SegmentationMask, b: &SegmentationMask) -> Result<f64> {
    let (i, u) = overlap_counts(a, b)?;
    Ok(iou_from_counts(i, u))
}
