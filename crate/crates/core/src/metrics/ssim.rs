use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::image::Plane;

/// Side of the uniform SSIM window.
pub const SSIM_WINDOW: usize = 7;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Summed-area table with a zero first row/column.
fn integral(x: &Array2<f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    let mut s = Array2::zeros((h + 1, w + 1));
    for i in 0..h {
        let mut row = 0.0;
        for j in 0..w {
            row += x[[i, j]];
            s[[i + 1, j + 1]] = s[[i, j + 1]] + row;
        }
    }
    s
}

#[inline]
fn window_sum(s: &Array2<f64>, i: usize, j: usize, n: usize) -> f64 {
    s[[i + n, j + n]] - s[[i, j + n]] - s[[i + n, j]] + s[[i, j]]
}

/// Mean SSIM over all fully contained 7×7 windows, with population
/// (biased) local variances and `C1 = (0.01 L)²`, `C2 = (0.03 L)²`.
///
/// `dynamic_range` defaults to `max(a, b) − min(a, b)` over both images; a
/// zero range falls back to 1.
pub fn ssim_arrays(a: ArrayView2<f32>, b: ArrayView2<f32>, dynamic_range: Option<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(a.dim(), b.dim()));
    }
    let (h, w) = a.dim();
    let n = SSIM_WINDOW;
    if h < n || w < n {
        return Err(Error::InvalidParameter(format!("SSIM needs at least {n}x{n} pixels")));
    }
    let range = dynamic_range.unwrap_or_else(|| {
        let (lo, hi) = a.iter().chain(b.iter()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
        hi - lo
    });
    let range = if range > 0.0 { range } else { 1.0 };
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);

    let x = a.mapv(|v| v as f64);
    let y = b.mapv(|v| v as f64);
    let sx = integral(&x);
    let sy = integral(&y);
    let sxx = integral(&(&x * &x));
    let syy = integral(&(&y * &y));
    let sxy = integral(&(&x * &y));
    let area = (n * n) as f64;

    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - n {
        for j in 0..=w - n {
            let mx = window_sum(&sx, i, j, n) / area;
            let my = window_sum(&sy, i, j, n) / area;
            let vx = window_sum(&sxx, i, j, n) / area - mx * mx;
            let vy = window_sum(&syy, i, j, n) / area - my * my;
            let cxy = window_sum(&sxy, i, j, n) / area - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    ssim_arrays(a.pixels().view(), b.pixels().view(), None)
}
