//! Contrast-limited adaptive histogram equalization.
//!
//! The plane is quantized into `bins` levels over its own intensity range
//! and split into a `tile × tile` grid. Each tile gets a histogram whose
//! counts above `clip_limit × (tile pixels / bins)` are cut and spread
//! evenly over all bins; its cumulative histogram is the tile's mapping.
//! Every pixel interpolates bilinearly between the mappings of the four
//! nearest tile centres. The result is mapped back to the input range.

use contrast_core::Plane;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClaheConfig {
    /// Tiles per axis.
    pub tile: usize,
    /// Histogram clip height in multiples of the mean bin count;
    /// `f64::INFINITY` disables clipping.
    pub clip_limit: f64,
    pub bins: usize,
}

impl Default for ClaheConfig {
    fn default() -> Self {
        Self {
            tile: 8,
            clip_limit: 3.0,
            bins: 256,
        }
    }
}

impl ClaheConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile < 1 {
            return Err(HarnessError::InvalidParameter("tile must be >= 1".into()));
        }
        if !(self.clip_limit > 0.0) {
            return Err(HarnessError::InvalidParameter(format!("clip_limit must be > 0, got {}", self.clip_limit)));
        }
        if self.bins < 2 {
            return Err(HarnessError::InvalidParameter(format!("bins must be >= 2, got {}", self.bins)));
        }
        Ok(())
    }
}

/// Tile `t`'s pixel range along an axis of length `n`.
fn tile_bounds(t: usize, tiles: usize, n: usize) -> (usize, usize) {
    (t * n / tiles, (t + 1) * n / tiles)
}

fn tile_mapping(levels: &Array2<usize>, rows: (usize, usize), cols: (usize, usize), cfg: &ClaheConfig) -> Vec<f64> {
    let mut hist = vec![0.0f64; cfg.bins];
    for i in rows.0..rows.1 {
        for j in cols.0..cols.1 {
            hist[levels[[i, j]]] += 1.0;
        }
    }
    let total = ((rows.1 - rows.0) * (cols.1 - cols.0)) as f64;
    if cfg.clip_limit.is_finite() {
        let limit = (cfg.clip_limit * total / cfg.bins as f64).max(1.0);
        let excess: f64 = hist.iter().map(|&h| (h - limit).max(0.0)).sum();
        let share = excess / cfg.bins as f64;
        hist.iter_mut().for_each(|h| *h = h.min(limit) + share);
    }
    let mut acc = 0.0;
    hist.iter()
        .map(|h| {
            acc += h;
            acc / total
        })
        .collect()
}

pub fn clahe(plane: &Plane, cfg: &ClaheConfig) -> Result<Plane> {
    cfg.validate()?;
    let px = plane.pixels();
    let (lo, hi) = px.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi <= lo {
        return Ok(plane.clone());
    }
    let (lo, range) = (lo as f64, (hi - lo) as f64);
    let top = (cfg.bins - 1) as f64;
    let levels = px.mapv(|v| (((v as f64 - lo) / range) * top).round() as usize);
    let (h, w) = px.dim();
    let (ty, tx) = (cfg.tile.min(h), cfg.tile.min(w));

    let maps: Vec<Vec<Vec<f64>>> = (0..ty)
        .map(|a| {
            (0..tx)
                .map(|b| tile_mapping(&levels, tile_bounds(a, ty, h), tile_bounds(b, tx, w), cfg))
                .collect()
        })
        .collect();
    let centre = |t: usize, tiles: usize, n: usize| {
        let (a, b) = tile_bounds(t, tiles, n);
        (a + b) as f64 / 2.0 - 0.5
    };
    let cy: Vec<f64> = (0..ty).map(|t| centre(t, ty, h)).collect();
    let cx: Vec<f64> = (0..tx).map(|t| centre(t, tx, w)).collect();
    // Neighbouring centres and the weight of the upper one.
    let locate = |p: f64, c: &[f64]| -> (usize, usize, f64) {
        if p <= c[0] {
            return (0, 0, 0.0);
        }
        if p >= c[c.len() - 1] {
            return (c.len() - 1, c.len() - 1, 0.0);
        }
        let k = c.partition_point(|&v| v <= p) - 1;
        (k, k + 1, (p - c[k]) / (c[k + 1] - c[k]))
    };

    let out = Array2::from_shape_fn((h, w), |(i, j)| {
        let (y0, y1, fy) = locate(i as f64, &cy);
        let (x0, x1, fx) = locate(j as f64, &cx);
        let l = levels[[i, j]];
        let top_row = (1.0 - fx) * maps[y0][x0][l] + fx * maps[y0][x1][l];
        let bottom_row = (1.0 - fx) * maps[y1][x0][l] + fx * maps[y1][x1][l];
        let v = (1.0 - fy) * top_row + fy * bottom_row;
        (lo + v * range) as f32
    });
    Ok(plane.with_pixels(out)?)
}
