//! Whole-plane and iterated application of a trained model.

use contrast_core::degrade::reflect_index;
use contrast_core::image::{DEFAULT_HI_PERCENTILE, DEFAULT_LO_PERCENTILE};
use contrast_core::{NormalizationParams, Plane, Volume};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::tensor::Tensor;
use crate::unet::Unet;

pub const MAX_ITERATIONS: usize = 16;

/// A model that maps a normalized single-channel image to one of equal size.
pub trait Enhancer {
    /// Input sides must be multiples of this.
    fn size_multiple(&self) -> usize;
    /// Input pixels farther than this from an output pixel do not affect it.
    fn context_radius(&self) -> usize;
    fn predict(&self, x: &Array2<f32>) -> Result<Array2<f32>>;
}

impl Enhancer for Unet<f32> {
    fn size_multiple(&self) -> usize {
        self.spec().size_multiple()
    }

    fn context_radius(&self) -> usize {
        self.spec().receptive_radius()
    }

    fn predict(&self, x: &Array2<f32>) -> Result<Array2<f32>> {
        let (h, w) = x.dim();
        let t = Tensor::from_vec(1, 1, h, w, x.iter().copied().collect());
        let y = self.forward(&t)?;
        Ok(Array2::from_shape_vec((h, w), y.data).expect("output shape"))
    }
}

/// Applies a scalar function to every pixel; stands in for a model in
/// plumbing tests.
pub struct PixelwiseStub<F> {
    f: F,
    multiple: usize,
}

impl<F: Fn(f32) -> f32> PixelwiseStub<F> {
    pub fn new(f: F, multiple: usize) -> Self {
        Self { f, multiple }
    }
}

impl<F: Fn(f32) -> f32> Enhancer for PixelwiseStub<F> {
    fn size_multiple(&self) -> usize {
        self.multiple
    }

    fn context_radius(&self) -> usize {
        0
    }

    fn predict(&self, x: &Array2<f32>) -> Result<Array2<f32>> {
        Ok(x.mapv(&self.f))
    }
}

/// f(x) = x.
pub fn identity_stub(multiple: usize) -> PixelwiseStub<fn(f32) -> f32> {
    PixelwiseStub::new(|v| v, multiple)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// k in DC^k.
    pub iterations: usize,
    pub tile_size: usize,
    /// Width of the linear cross-fade between neighbouring tiles.
    pub tile_overlap: usize,
    /// Outputs are clipped from below at `clip_floor` times the input's
    /// normalization range (in intensity units).
    pub clip_floor: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            iterations: 1,
            tile_size: 256,
            tile_overlap: 32,
            clip_floor: 1e-6,
        }
    }
}

impl InferenceConfig {
    pub fn with_iterations(&self, iterations: usize) -> Self {
        Self {
            iterations,
            ..self.clone()
        }
    }

    pub fn validate(&self, multiple: usize) -> Result<()> {
        let bad = |m: String| Err(NetError::InvalidConfig(m));
        if self.iterations == 0 || self.iterations > MAX_ITERATIONS {
            return bad(format!("iterations must be in 1..={MAX_ITERATIONS}, got {}", self.iterations));
        }
        if self.tile_size == 0 || !self.tile_size.is_multiple_of(multiple) {
            return Err(NetError::Divisibility {
                got: (self.tile_size, self.tile_size),
                multiple,
            });
        }
        if 2 * self.tile_overlap >= self.tile_size {
            return bad(format!(
                "tile_overlap {} must be below half of tile_size {}",
                self.tile_overlap, self.tile_size
            ));
        }
        if !(self.clip_floor >= 0.0 && self.clip_floor.is_finite()) {
            return bad(format!("clip_floor must be finite and >= 0, got {}", self.clip_floor));
        }
        Ok(())
    }
}

/// One tile along an axis: the output core and the input window around it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Span {
    core: (usize, usize),
    window: (usize, usize),
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Splits `[0, len)` into cores of `tile` (multiples of `m`) stepping by
/// `tile − overlap` rounded down to `m`; the last core ends at `len`.
fn spans(len: usize, tile: usize, overlap: usize, halo: usize, m: usize) -> Vec<Span> {
    let window = |a: usize, b: usize| (a.saturating_sub(halo), (b + halo).min(len));
    if len <= tile {
        return vec![Span {
            core: (0, len),
            window: (0, len),
        }];
    }
    let step = ((tile - overlap) / m * m).max(m);
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let start_c = start.min(len - tile);
        out.push(Span {
            core: (start_c, start_c + tile),
            window: window(start_c, start_c + tile),
        });
        if start_c + tile >= len {
            break;
        }
        start += step;
    }
    out
}

/// Feathering weight of position `p` inside `core`; ramps only on sides that
/// border another tile.
fn feather(p: usize, core: (usize, usize), len: usize, overlap: usize) -> f64 {
    if overlap == 0 {
        return 1.0;
    }
    let o = overlap as f64;
    let mut w: f64 = 1.0;
    if core.0 > 0 {
        w = w.min(((p - core.0) as f64 + 0.5) / o);
    }
    if core.1 < len {
        w = w.min(((core.1 - p) as f64 - 0.5) / o);
    }
    w
}

/// Reflect-pads bottom and right to multiples of `m`.
fn pad_to_multiple(x: &Array2<f32>, m: usize) -> Array2<f32> {
    let (h, w) = x.dim();
    let (hp, wp) = (round_up(h, m), round_up(w, m));
    if (hp, wp) == (h, w) {
        return x.clone();
    }
    Array2::from_shape_fn((hp, wp), |(i, j)| x[[reflect_index(i as i64, h), reflect_index(j as i64, w)]])
}

/// Runs `model` over a normalized array tile by tile. Each tile sees its
/// core plus a context margin covering the model's receptive radius, so
/// results match a single whole-array pass up to rounding; overlapping
/// cores are blended with linear weights that sum to one.
pub fn predict_tiled<M: Enhancer + ?Sized>(model: &M, x: &Array2<f32>, cfg: &InferenceConfig) -> Result<Array2<f32>> {
    let m = model.size_multiple();
    cfg.validate(m)?;
    let (h, w) = x.dim();
    if h < m || w < m {
        return Err(NetError::PlaneTooSmall { plane: (h, w), patch: m });
    }
    let canvas = pad_to_multiple(x, m);
    let (hc, wc) = canvas.dim();
    let halo = round_up(model.context_radius(), m);
    let rows = spans(hc, cfg.tile_size, cfg.tile_overlap, halo, m);
    let cols = spans(wc, cfg.tile_size, cfg.tile_overlap, halo, m);

    let out = if rows.len() == 1 && cols.len() == 1 {
        model.predict(&canvas)?
    } else {
        let mut acc = Array2::<f64>::zeros((hc, wc));
        let mut weight = Array2::<f64>::zeros((hc, wc));
        for r in &rows {
            for c in &cols {
                let win = canvas.slice(s![r.window.0..r.window.1, c.window.0..c.window.1]).to_owned();
                let y = model.predict(&win)?;
                for i in r.core.0..r.core.1 {
                    let wy = feather(i, r.core, hc, cfg.tile_overlap);
                    for j in c.core.0..c.core.1 {
                        let wgt = wy * feather(j, c.core, wc, cfg.tile_overlap);
                        acc[[i, j]] += wgt * y[[i - r.window.0, j - c.window.0]] as f64;
                        weight[[i, j]] += wgt;
                    }
                }
            }
        }
        ndarray::Zip::from(&acc).and(&weight).map_collect(|&a, &w| (a / w) as f32)
    };
    Ok(out.slice(s![..h, ..w]).to_owned())
}

/// One application of the model to a plane: percentile normalization,
/// tiled prediction, denormalization with the input's params, clipping.
pub fn enhance_plane<M: Enhancer + ?Sized>(model: &M, plane: &Plane, cfg: &InferenceConfig) -> Result<Plane> {
    let params = NormalizationParams::from_plane(plane, DEFAULT_LO_PERCENTILE, DEFAULT_HI_PERCENTILE)?;
    let y = predict_tiled(model, &params.apply(plane.pixels()), cfg)?;
    let floor = (cfg.clip_floor * params.range()) as f32;
    let out = params.invert(&y).mapv(|v| if v.is_nan() { floor } else { v.max(floor) });
    Ok(plane.with_pixels(out)?)
}

/// `[DC¹(v), …, DC^k(v)]`; every application re-normalizes its own input.
pub fn enhance_iterative<M: Enhancer + ?Sized>(model: &M, volume: &Volume, cfg: &InferenceConfig) -> Result<Vec<Volume>> {
    cfg.validate(model.size_multiple())?;
    let mut out: Vec<Volume> = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let input = out.last().unwrap_or(volume);
        let planes = input
            .planes()
            .iter()
            .map(|p| enhance_plane(model, p, cfg))
            .collect::<Result<Vec<_>>>()?;
        out.push(Volume::new(planes, volume.depth_step_um())?);
    }
    Ok(out)
}
