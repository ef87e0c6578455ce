//! Phantom datasets, model training and the evaluation protocols.

use contrast_core::degrade::{degrade_volume, double_degrade, DegradationConfig};
use contrast_core::metrics::report::MetricsRow;
use contrast_core::metrics::stats::{mean, sample_sd};
use contrast_core::metrics::{iou, pci, ssim, wci};
use contrast_core::phantom::{generate, Phantom, PhantomConfig};
use contrast_core::segment::{best_threshold_iou, iteration_sweep, threshold_mask, SweepResult};
use contrast_core::{SegmentationMask, Volume};
use contrast_net::{enhance_iterative, Checkpoint, Enhancer, InferenceConfig, ModelSpec, PatchSampler, Unet};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub fn train_phantom_config(cfg: &ExperimentConfig, i: usize) -> PhantomConfig {
    cfg.phantom.with_seed(cfg.phantom.seed.wrapping_add(i as u64))
}

pub fn eval_phantom_config(cfg: &ExperimentConfig, j: usize) -> PhantomConfig {
    cfg.phantom
        .with_seed(cfg.phantom.seed.wrapping_add(cfg.eval_seed_offset).wrapping_add(j as u64))
}

/// Degradation settings for the `i`-th volume of a dataset.
pub fn degradation_for(cfg: &ExperimentConfig, i: usize) -> DegradationConfig {
    DegradationConfig {
        seed: cfg.degradation.seed.wrapping_add(i as u64),
        ..cfg.degradation.clone()
    }
}

/// Pseudo-raw stacks of the training phantoms.
pub fn training_volumes(cfg: &ExperimentConfig) -> Result<Vec<Volume>> {
    (0..cfg.n_train_phantoms)
        .map(|i| Ok(generate(&train_phantom_config(cfg, i))?.raw))
        .collect()
}

pub fn eval_phantoms(cfg: &ExperimentConfig) -> Result<Vec<Phantom>> {
    (0..cfg.n_eval_phantoms)
        .map(|j| Ok(generate(&eval_phantom_config(cfg, j))?))
        .collect()
}

/// `(d(x), x)` training pairs.
pub fn single_pairs(cfg: &ExperimentConfig, raw: &[Volume]) -> Result<Vec<(Volume, Volume)>> {
    raw.iter()
        .enumerate()
        .map(|(i, x)| Ok((degrade_volume(x, &degradation_for(cfg, i))?, x.clone())))
        .collect()
}

/// `(e, d)` pairs with `e = d(d(x))`.
pub fn double_pairs(cfg: &ExperimentConfig, raw: &[Volume]) -> Result<Vec<(Volume, Volume)>> {
    raw.iter()
        .enumerate()
        .map(|(i, x)| {
            let (d, e) = double_degrade(x, &degradation_for(cfg, i))?;
            Ok((e, d))
        })
        .collect()
}

/// Trains a fresh model of topology `spec` on `pairs`.
pub fn train_on_pairs(cfg: &ExperimentConfig, pairs: &[(Volume, Volume)], spec: &ModelSpec) -> Result<Checkpoint> {
    let mut sampler = PatchSampler::new(pairs, &cfg.training)?;
    let model = Unet::new(spec.clone(), cfg.training.seed)?;
    Ok(contrast_net::train(model, &mut sampler, &cfg.training)?)
}

/// Joins the planes of several stacks into one, renumbering depth.
pub fn concat_volumes(volumes: &[Volume]) -> Result<Volume> {
    let arrays = volumes
        .iter()
        .flat_map(|v| v.planes().iter().map(|p| p.pixels().clone()))
        .collect();
    Ok(Volume::from_arrays(arrays)?)
}

/// Per-plane metrics of one variant. SSIM and IoU columns are filled when a
/// reference stack or masks are given; IoU uses the best grid threshold.
pub fn metrics_rows(
    variant: &str,
    volume: &Volume,
    reference: Option<&Volume>,
    masks: Option<&[SegmentationMask]>,
    n_grid: usize,
) -> Result<Vec<MetricsRow>> {
    if let Some(r) = reference {
        check_aligned(volume, r.len(), r.plane_dim())?;
    }
    if let Some(m) = masks {
        if m.len() != volume.len() {
            return Err(HarnessError::InvalidParameter(format!(
                "{} masks for {} planes",
                m.len(),
                volume.len()
            )));
        }
    }
    volume
        .planes()
        .iter()
        .enumerate()
        .map(|(z, p)| {
            let iou_vs_gt = match masks {
                Some(m) => {
                    let (t, _) = best_threshold_iou(p, &m[z], n_grid)?;
                    Some(iou(&threshold_mask(p, t), &m[z])?)
                }
                None => None,
            };
            Ok(MetricsRow {
                depth_index: p.depth_index(),
                variant: variant.to_string(),
                wci: defined_or_nan(wci(p))?,
                pci: defined_or_nan(pci(p))?,
                ssim_vs_ref: reference.map(|r| ssim(p, r.plane(z))).transpose()?,
                iou_vs_gt,
            })
        })
        .collect()
}

/// Contrast indices are undefined on planes whose median is zero (e.g.
/// backgrounds clipped to the floor); those become NaN and are left out of
/// means.
pub fn defined_or_nan(value: contrast_core::Result<f64>) -> Result<f64> {
    match value {
        Err(contrast_core::Error::DegenerateContrast | contrast_core::Error::NonPositiveMedian) => Ok(f64::NAN),
        other => Ok(other?),
    }
}

fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    mean(&values.filter(|v| v.is_finite()).collect::<Vec<_>>())
}

fn check_aligned(v: &Volume, len: usize, dim: (usize, usize)) -> Result<()> {
    if v.len() != len || v.plane_dim() != dim {
        return Err(HarnessError::InvalidParameter(format!(
            "stacks differ: {} planes of {:?} vs {} of {:?}",
            v.len(),
            v.plane_dim(),
            len,
            dim
        )));
    }
    Ok(())
}

/// Mean contrast of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastSummary {
    pub variant: String,
    /// Planes where both indices are defined; the means cover these.
    pub n_planes: usize,
    pub mean_pci: f64,
    pub mean_wci: f64,
}

pub fn variant_label(k: usize) -> String {
    if k == 0 {
        "raw".to_string()
    } else {
        format!("DC-{k}x")
    }
}

/// Raw stack followed by `k` iterated enhancements.
pub fn enhancement_series<M: Enhancer + ?Sized>(model: &M, raw: &Volume, inference: &InferenceConfig, k: usize) -> Result<Vec<Volume>> {
    let mut series = vec![raw.clone()];
    if k > 0 {
        series.extend(enhance_iterative(model, raw, &inference.with_iterations(k))?);
    }
    Ok(series)
}

pub fn summarize_contrast(series: &[Volume]) -> Result<Vec<ContrastSummary>> {
    series
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let rows = metrics_rows(&variant_label(k), v, None, None, 2)?;
            Ok(ContrastSummary {
                variant: variant_label(k),
                n_planes: rows.iter().filter(|r| r.pci.is_finite() && r.wci.is_finite()).count(),
                mean_pci: finite_mean(rows.iter().map(|r| r.pci)),
                mean_wci: finite_mean(rows.iter().map(|r| r.wci)),
            })
        })
        .collect()
}

/// Iteration sweep over the held-out phantoms (planes pooled).
pub fn segmentation_sweep<M: Enhancer + ?Sized>(model: &M, eval: &[Phantom], cfg: &ExperimentConfig) -> Result<SweepResult> {
    let raw = concat_volumes(&eval.iter().map(|p| p.raw.clone()).collect::<Vec<_>>())?;
    let masks: Vec<SegmentationMask> = eval.iter().flat_map(|p| p.masks.iter().cloned()).collect();
    let series = enhancement_series(model, &raw, &cfg.inference, cfg.sweep_max_k)?;
    Ok(iteration_sweep(&series, &masks, cfg.threshold_grid)?)
}

pub const BAND_LABELS: [&str; 5] = ["very shallow", "shallow", "medium", "deep", "very deep"];

/// Band of slice `z` in a stack of `n`: equal fifths, shallow first.
pub fn depth_band(z: usize, n: usize) -> usize {
    (z * 5 / n.max(1)).min(4)
}

/// One depth band of the double-degradation SSIM table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub band: String,
    pub n: usize,
    /// Mean and sd of SSIM for the three comparisons: MB¹(d) vs x,
    /// MB²(d) vs MA¹(x), MB³(d) vs MA²(x).
    pub mean: [f64; 3],
    pub sd: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleReport {
    pub bands: Vec<BandRow>,
    /// Column means over every plane.
    pub overall: [f64; 3],
}

impl DoubleReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("band,n,mb1_d_vs_x_mean,mb1_d_vs_x_sd,mb2_d_vs_ma1_x_mean,mb2_d_vs_ma1_x_sd,mb3_d_vs_ma2_x_mean,mb3_d_vs_ma2_x_sd\n");
        let mut push = |label: &str, n: usize, m: &[f64; 3], sd: Option<&[f64; 3]>| {
            s.push_str(&format!("{label},{n}"));
            for c in 0..3 {
                match sd {
                    Some(sd) => s.push_str(&format!(",{},{}", m[c], sd[c])),
                    None => s.push_str(&format!(",{},", m[c])),
                }
            }
            s.push('\n');
        };
        let total: usize = self.bands.iter().map(|b| b.n).sum();
        for b in &self.bands {
            push(&b.band, b.n, &b.mean, Some(&b.sd));
        }
        push("all", total, &self.overall, None);
        s
    }
}

/// SSIM table comparing Model B iterates on `d` with the reference `x` and
/// Model A iterates on `x`. Every stack in `xs` is degraded once with the
/// experiment's degradation settings (seeded per stack) to form `d`.
pub fn double_degradation_table<A: Enhancer + ?Sized, B: Enhancer + ?Sized>(
    model_a: &A,
    model_b: &B,
    xs: &[Volume],
    cfg: &ExperimentConfig,
) -> Result<DoubleReport> {
    let mut per_band: Vec<[Vec<f64>; 3]> = vec![Default::default(); 5];
    let mut all: [Vec<f64>; 3] = Default::default();
    for (i, x) in xs.iter().enumerate() {
        let d = degrade_volume(x, &degradation_for(cfg, i))?;
        let mb = enhance_iterative(model_b, &d, &cfg.inference.with_iterations(3))?;
        let ma = enhance_iterative(model_a, x, &cfg.inference.with_iterations(2))?;
        let refs = [x, &ma[0], &ma[1]];
        for z in 0..x.len() {
            let band = depth_band(z, x.len());
            for c in 0..3 {
                let s = ssim(mb[c].plane(z), refs[c].plane(z))?;
                per_band[band][c].push(s);
                all[c].push(s);
            }
        }
    }
    let bands = per_band
        .iter()
        .enumerate()
        .filter(|(_, cols)| !cols[0].is_empty())
        .map(|(b, cols)| BandRow {
            band: BAND_LABELS[b].to_string(),
            n: cols[0].len(),
            mean: [mean(&cols[0]), mean(&cols[1]), mean(&cols[2])],
            sd: [sample_sd(&cols[0]), sample_sd(&cols[1]), sample_sd(&cols[2])],
        })
        .collect();
    Ok(DoubleReport {
        bands,
        overall: [mean(&all[0]), mean(&all[1]), mean(&all[2])],
    })
}

/// Mean SSIM between two models' outputs on the same stack, per depth.
pub fn output_agreement<A: Enhancer + ?Sized, B: Enhancer + ?Sized>(
    a: &A,
    b: &B,
    raw: &Volume,
    inference: &InferenceConfig,
) -> Result<Vec<f64>> {
    let ya = enhance_iterative(a, raw, &inference.with_iterations(1))?;
    let yb = enhance_iterative(b, raw, &inference.with_iterations(1))?;
    ya[0]
        .planes()
        .iter()
        .zip(yb[0].planes())
        .map(|(p, q)| Ok(ssim(p, q)?))
        .collect()
}

/// Structural zero-offset check: true when the checkpoint holds no
/// trainable additive offsets.
pub fn ablation_free_check(c: &Checkpoint) -> Result<bool> {
    Ok(c.offset_param_count()? == 0)
}
