//! Orthonormal 2D Haar wavelet transform.
//!
//! One analysis level maps each 2×2 block `[[a, b], [c, d]]` to
//!
//! ```text
//! approximation = (a + b + c + d) / 2
//! horizontal    = (a − b + c − d) / 2
//! vertical      = (a + b − c − d) / 2
//! diagonal      = (a − b − c + d) / 2
//! ```
//!
//! which is the separable filter pair (1/√2, 1/√2), (1/√2, −1/√2) applied
//! along rows and then columns. The transform is orthonormal, so coefficient
//! energy equals pixel energy.

use ndarray::{Array2, ArrayView2};

use crate::degrade::reflect_index;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DetailBands {
    pub horizontal: Array2<f64>,
    pub vertical: Array2<f64>,
    pub diagonal: Array2<f64>,
}

impl DetailBands {
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.horizontal
            .iter()
            .chain(self.vertical.iter())
            .chain(self.diagonal.iter())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletDecomposition {
    /// Detail bands, finest level first.
    pub levels: Vec<DetailBands>,
    /// Approximation band of the coarsest level.
    pub approximation: Array2<f64>,
    /// Shape of the analysed input.
    pub original_dim: (usize, usize),
    /// Shape after reflection padding to a multiple of `2^levels`; equal to
    /// `original_dim` when no padding was needed.
    pub padded_dim: (usize, usize),
}

impl WaveletDecomposition {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// All detail coefficients of every level.
    pub fn details(&self) -> impl Iterator<Item = &f64> {
        self.levels.iter().flat_map(DetailBands::iter)
    }

    pub fn energy(&self) -> f64 {
        self.details().map(|c| c * c).sum::<f64>() + self.approximation.iter().map(|c| c * c).sum::<f64>()
    }

    pub fn was_padded(&self) -> bool {
        self.original_dim != self.padded_dim
    }
}

fn analyze_level(x: ArrayView2<f64>) -> (Array2<f64>, DetailBands) {
    let (h, w) = (x.nrows() / 2, x.ncols() / 2);
    let mut approx = Array2::zeros((h, w));
    let mut horizontal = Array2::zeros((h, w));
    let mut vertical = Array2::zeros((h, w));
    let mut diagonal = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let a = x[[2 * i, 2 * j]];
            let b = x[[2 * i, 2 * j + 1]];
            let c = x[[2 * i + 1, 2 * j]];
            let d = x[[2 * i + 1, 2 * j + 1]];
            approx[[i, j]] = (a + b + c + d) * 0.5;
            horizontal[[i, j]] = (a - b + c - d) * 0.5;
            vertical[[i, j]] = (a + b - c - d) * 0.5;
            diagonal[[i, j]] = (a - b - c + d) * 0.5;
        }
    }
    (
        approx,
        DetailBands {
            horizontal,
            vertical,
            diagonal,
        },
    )
}

fn synthesize_level(approx: &Array2<f64>, bands: &DetailBands) -> Array2<f64> {
    let (h, w) = approx.dim();
    let mut x = Array2::zeros((2 * h, 2 * w));
    for i in 0..h {
        for j in 0..w {
            let s = approx[[i, j]];
            let hz = bands.horizontal[[i, j]];
            let v = bands.vertical[[i, j]];
            let d = bands.diagonal[[i, j]];
            x[[2 * i, 2 * j]] = (s + hz + v + d) * 0.5;
            x[[2 * i, 2 * j + 1]] = (s - hz + v - d) * 0.5;
            x[[2 * i + 1, 2 * j]] = (s + hz - v - d) * 0.5;
            x[[2 * i + 1, 2 * j + 1]] = (s - hz - v + d) * 0.5;
        }
    }
    x
}

/// Multi-level Haar analysis, recursing on the approximation band.
///
/// Inputs whose sides are not divisible by `2^levels` are reflection-padded
/// (half-sample symmetric) at the bottom/right edge first; the padding is
/// recorded in `padded_dim`.
pub fn haar_dwt2(x: ArrayView2<f64>, levels: usize) -> Result<WaveletDecomposition> {
    if levels < 1 {
        return Err(Error::InvalidParameter("wavelet levels must be >= 1".into()));
    }
    let (h, w) = x.dim();
    if h == 0 || w == 0 {
        return Err(Error::EmptyInput);
    }
    let block = 1usize << levels;
    let (ph, pw) = (h.div_ceil(block) * block, w.div_ceil(block) * block);
    let mut current = if (ph, pw) == (h, w) {
        x.to_owned()
    } else {
        Array2::from_shape_fn((ph, pw), |(i, j)| x[[reflect_index(i as i64, h), reflect_index(j as i64, w)]])
    };
    let mut bands = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (approx, detail) = analyze_level(current.view());
        bands.push(detail);
        current = approx;
    }
    Ok(WaveletDecomposition {
        levels: bands,
        approximation: current,
        original_dim: (h, w),
        padded_dim: (ph, pw),
    })
}

/// Inverse transform; returns the (possibly padded) reconstruction cropped
/// back to the original shape.
pub fn haar_idwt2(decomposition: &WaveletDecomposition) -> Array2<f64> {
    let mut current = decomposition.approximation.clone();
    for bands in decomposition.levels.iter().rev() {
        current = synthesize_level(&current, bands);
    }
    let (h, w) = decomposition.original_dim;
    current.slice(ndarray::s![..h, ..w]).to_owned()
}
