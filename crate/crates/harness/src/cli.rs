//! The `contrast` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use contrast_core::degrade::{degrade_volume, double_degrade};
use contrast_core::metrics::report::{aggregate_report, MetricsReport, MetricsRow};
use contrast_core::metrics::{pci, wci};
use contrast_core::phantom::generate;
use contrast_core::tiff_io::{read_masks, read_volume, write_masks, write_volume, OutputDtype};
use contrast_core::{SegmentationMask, Volume};
use contrast_net::{enhance_iterative, Checkpoint, ModelSpec};
use log::info;
use serde::{Deserialize, Serialize};

use crate::clahe::{clahe, ClaheConfig};
use crate::config::{ExperimentConfig, Profile};
use crate::error::{HarnessError, Result};
use crate::experiment::{
    defined_or_nan,
    double_degradation_table, double_pairs, eval_phantom_config, eval_phantoms, metrics_rows, output_agreement,
    segmentation_sweep, single_pairs, train_on_pairs, train_phantom_config, training_volumes,
};
use crate::gain::estimate_gain;
use crate::manifest::{deterministic_requested, FileRecord, RunManifest};
use crate::plot::{render_metric, render_sweep, Metric};

#[derive(Debug, Parser)]
#[command(name = "contrast", version, about = "Contrast enhancement experiments on synthetic cell-border stacks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Default, Args)]
pub struct GlobalArgs {
    /// Experiment config (JSON). Fields left out take profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    /// Seed for phantoms, degradation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Override one config field by dotted path, e.g. `training.epochs=5`.
    /// The value is parsed as JSON, falling back to a string.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    /// Model A on (d(x), x).
    #[default]
    Single,
    /// Model B on (d(d(x)), d(x)).
    Double,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate clean, pseudo-raw and mask TIFF stacks.
    Phantom {
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Use the held-out seeds instead of the training seeds.
        #[arg(long)]
        held_out: bool,
    },
    /// Apply the degradation model to a stack.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        /// Also write the twice-degraded stack.
        #[arg(long)]
        double: bool,
    },
    /// Train a model on phantom pairs or on given raw stacks.
    Train {
        #[arg(long, value_enum, default_value_t = PairKind::Single)]
        pairs: PairKind,
        /// Raw stacks; phantoms from the config are generated when absent.
        #[arg(long)]
        raw: Vec<PathBuf>,
        /// Train the twin with additive offsets.
        #[arg(long)]
        bias: bool,
    },
    /// Apply a checkpoint k times, writing every iterate.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Per-depth WCI/PCI (and SSIM/IoU) report with plots.
    Metrics {
        /// `label=path`; repeat a label to pool several stacks.
        #[arg(long = "variant", required = true)]
        variants: Vec<String>,
        /// Stack to compute SSIM against.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Ground-truth masks for best-threshold IoU.
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Re-render plots from a metrics CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
    },
    /// Segmentation sweep over enhancement iterations.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Raw stack; held-out phantoms are used when absent.
        #[arg(long, requires = "masks")]
        input: Option<PathBuf>,
        #[arg(long, requires = "input")]
        masks: Option<PathBuf>,
        #[arg(long)]
        max_k: Option<usize>,
    },
    /// Double-degradation protocol: train Models A and B, tabulate SSIM.
    VerifyDouble {
        #[arg(long)]
        model_a: Option<PathBuf>,
        #[arg(long)]
        model_b: Option<PathBuf>,
    },
    /// Train (or load) offset-free and offset twins and compare them.
    AblateBias {
        #[arg(long)]
        bias_free: Option<PathBuf>,
        #[arg(long)]
        biased: Option<PathBuf>,
    },
    /// Suggest a noise gain from patch mean–variance statistics.
    EstimateGain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 8)]
        patch: usize,
    },
    /// CLAHE baseline.
    Clahe {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 8)]
        tile: usize,
        #[arg(long, default_value_t = 3.0)]
        clip_limit: f64,
        #[arg(long, default_value_t = 256)]
        bins: usize,
    },
    /// Write the resolved configuration.
    InitConfig,
    /// Repeat a recorded run and check its outputs match bit for bit.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// Files a command read and wrote.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

fn set_path(root: &mut serde_json::Value, key: &str, value: serde_json::Value) -> Result<()> {
    let mut node = root;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| HarnessError::Config(format!("unknown config key `{key}`")))?;
    }
    *node = value;
    Ok(())
}

/// Config file or profile preset, then `--set`, `--seed` and `--output-dir`.
pub fn resolve_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::for_profile(global.profile.unwrap_or_default()),
    };
    if !global.overrides.is_empty() {
        let mut value = serde_json::to_value(&cfg)?;
        for ov in &global.overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("override `{ov}` is not KEY=VALUE")))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            set_path(&mut value, key, parsed)?;
        }
        cfg = serde_json::from_value(value)?;
    }
    if let Some(seed) = global.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(dir) = &global.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_input(path: &Path, inputs: &mut Vec<PathBuf>) -> Result<Volume> {
    inputs.push(path.to_path_buf());
    Ok(read_volume(path)?)
}

fn load_checkpoint(path: &Path, inputs: &mut Vec<PathBuf>) -> Result<Checkpoint> {
    inputs.push(path.to_path_buf());
    Ok(Checkpoint::load(path)?)
}

fn write_text(path: PathBuf, text: &str, out: &mut Outcome) -> Result<()> {
    std::fs::write(&path, text)?;
    out.outputs.push(path);
    Ok(())
}

fn write_stack(path: PathBuf, v: &Volume, out: &mut Outcome) -> Result<()> {
    write_volume(v, &path, OutputDtype::Float32)?;
    out.outputs.push(path);
    Ok(())
}

fn save_checkpoint(path: PathBuf, c: &Checkpoint, out: &mut Outcome) -> Result<()> {
    c.save(&path)?;
    out.outputs.push(path);
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn write_metric_plots(report: &MetricsReport, dir: &Path, out: &mut Outcome) -> Result<()> {
    for m in Metric::ALL {
        if let Some(svg) = render_metric(report, m) {
            write_text(dir.join(format!("metrics_{}.svg", m.name())), &svg, out)?;
        }
    }
    Ok(())
}

fn raw_training_stacks(cfg: &ExperimentConfig, raw: &[PathBuf], out: &mut Outcome) -> Result<Vec<Volume>> {
    if raw.is_empty() {
        training_volumes(cfg)
    } else {
        raw.iter().map(|p| read_input(p, &mut out.inputs)).collect()
    }
}

fn spec_with_bias(cfg: &ExperimentConfig, bias: bool) -> ModelSpec {
    ModelSpec {
        bias_free: !bias,
        ..cfg.model.clone()
    }
}

/// Runs one command with a resolved config, writing into `cfg.output_dir`.
pub fn execute(command: &Command, cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir)?;
    let mut out = Outcome::default();
    match command {
        Command::Phantom { count, held_out } => {
            for i in 0..*count {
                let pc = if *held_out { eval_phantom_config(cfg, i) } else { train_phantom_config(cfg, i) };
                let ph = generate(&pc)?;
                let stem = if *held_out { format!("heldout_{i:02}") } else { format!("phantom_{i:02}") };
                write_stack(dir.join(format!("{stem}_clean.tif")), &ph.clean, &mut out)?;
                write_stack(dir.join(format!("{stem}_raw.tif")), &ph.raw, &mut out)?;
                let masks: Vec<_> = ph.masks.iter().map(|m| m.pixels().clone()).collect();
                let path = dir.join(format!("{stem}_masks.tif"));
                write_masks(&masks, &path)?;
                out.outputs.push(path);
            }
        }
        Command::Degrade { input, double } => {
            let x = read_input(input, &mut out.inputs)?;
            if *double {
                let (d, e) = double_degrade(&x, &cfg.degradation)?;
                write_stack(dir.join("degraded.tif"), &d, &mut out)?;
                write_stack(dir.join("double_degraded.tif"), &e, &mut out)?;
            } else {
                write_stack(dir.join("degraded.tif"), &degrade_volume(&x, &cfg.degradation)?, &mut out)?;
            }
        }
        Command::Train { pairs, raw, bias } => {
            let stacks = raw_training_stacks(cfg, raw, &mut out)?;
            let data = match pairs {
                PairKind::Single => single_pairs(cfg, &stacks)?,
                PairKind::Double => double_pairs(cfg, &stacks)?,
            };
            let ckpt = train_on_pairs(cfg, &data, &spec_with_bias(cfg, *bias))?;
            let name = match (pairs, bias) {
                (PairKind::Single, false) => "model_a",
                (PairKind::Double, false) => "model_b",
                (PairKind::Single, true) => "model_a_bias",
                (PairKind::Double, true) => "model_b_bias",
            };
            info!(
                "best validation MAE {:.5} (identity {:.5})",
                ckpt.history.best_val_loss, ckpt.history.identity_val_loss
            );
            save_checkpoint(dir.join(format!("{name}.ckpt")), &ckpt, &mut out)?;
            write_text(dir.join(format!("{name}_history.json")), &to_json(&ckpt.history)?, &mut out)?;
        }
        Command::Enhance { checkpoint, input, iterations } => {
            let model = load_checkpoint(checkpoint, &mut out.inputs)?.model()?;
            let x = read_input(input, &mut out.inputs)?;
            let k = iterations.unwrap_or(cfg.inference.iterations);
            for (i, v) in enhance_iterative(&model, &x, &cfg.inference.with_iterations(k))?.iter().enumerate() {
                write_stack(dir.join(format!("enhanced_k{}.tif", i + 1)), v, &mut out)?;
            }
        }
        Command::Metrics { variants, reference, masks } => {
            let reference = reference.as_ref().map(|p| read_input(p, &mut out.inputs)).transpose()?;
            let masks: Option<Vec<SegmentationMask>> = match masks {
                Some(p) => {
                    out.inputs.push(p.clone());
                    Some(read_masks(p)?.into_iter().map(SegmentationMask::new).collect())
                }
                None => None,
            };
            let mut rows: Vec<MetricsRow> = Vec::new();
            for spec in variants {
                let (label, path) = spec
                    .split_once('=')
                    .ok_or_else(|| HarnessError::InvalidParameter(format!("variant `{spec}` is not label=path")))?;
                let v = read_input(Path::new(path), &mut out.inputs)?;
                rows.extend(metrics_rows(label, &v, reference.as_ref(), masks.as_deref(), cfg.threshold_grid)?);
            }
            let mut planes = csv_from_rows(&rows)?;
            if !planes.ends_with('\n') {
                planes.push('\n');
            }
            write_text(dir.join("metrics_planes.csv"), &planes, &mut out)?;
            let report = aggregate_report(&rows)?;
            write_text(dir.join("metrics.csv"), &report.to_csv_string()?, &mut out)?;
            write_metric_plots(&report, dir, &mut out)?;
        }
        Command::Plot { csv } => {
            out.inputs.push(csv.clone());
            let report = MetricsReport::read_csv(std::fs::File::open(csv)?)?;
            write_metric_plots(&report, dir, &mut out)?;
        }
        Command::Sweep { checkpoint, input, masks, max_k } => {
            let model = load_checkpoint(checkpoint, &mut out.inputs)?.model()?;
            let mut c = cfg.clone();
            if let Some(k) = max_k {
                c.sweep_max_k = *k;
            }
            let sweep = match (input, masks) {
                (Some(input), Some(mask_path)) => {
                    let raw = read_input(input, &mut out.inputs)?;
                    out.inputs.push(mask_path.clone());
                    let gt: Vec<SegmentationMask> = read_masks(mask_path)?.into_iter().map(SegmentationMask::new).collect();
                    let series = crate::experiment::enhancement_series(&model, &raw, &c.inference, c.sweep_max_k)?;
                    contrast_core::segment::iteration_sweep(&series, &gt, c.threshold_grid)?
                }
                _ => segmentation_sweep(&model, &eval_phantoms(&c)?, &c)?,
            };
            info!("selected k* = {}", sweep.selected_k);
            write_text(dir.join("sweep.json"), &to_json(&sweep)?, &mut out)?;
            write_text(dir.join("sweep_per_plane.csv"), &sweep.per_plane_csv(), &mut out)?;
            write_text(dir.join("sweep.svg"), &render_sweep(&sweep), &mut out)?;
        }
        Command::VerifyDouble { model_a, model_b } => {
            let mut stacks = None;
            let mut get_stacks = |cfg: &ExperimentConfig| -> Result<Vec<Volume>> {
                if stacks.is_none() {
                    stacks = Some(training_volumes(cfg)?);
                }
                Ok(stacks.clone().unwrap())
            };
            let a = match model_a {
                Some(p) => load_checkpoint(p, &mut out.inputs)?,
                None => {
                    let c = train_on_pairs(cfg, &single_pairs(cfg, &get_stacks(cfg)?)?, &cfg.model)?;
                    save_checkpoint(dir.join("model_a.ckpt"), &c, &mut out)?;
                    c
                }
            };
            let b = match model_b {
                Some(p) => load_checkpoint(p, &mut out.inputs)?,
                None => {
                    let c = train_on_pairs(cfg, &double_pairs(cfg, &get_stacks(cfg)?)?, &cfg.model)?;
                    save_checkpoint(dir.join("model_b.ckpt"), &c, &mut out)?;
                    c
                }
            };
            let xs: Vec<Volume> = eval_phantoms(cfg)?.into_iter().map(|p| p.raw).collect();
            let report = double_degradation_table(&a.model()?, &b.model()?, &xs, cfg)?;
            info!("column means {:?}", report.overall);
            write_text(dir.join("verify_double.csv"), &report.to_csv(), &mut out)?;
            write_text(dir.join("verify_double.json"), &to_json(&report)?, &mut out)?;
        }
        Command::AblateBias { bias_free, biased } => {
            let mut pairs = None;
            let mut twin = |path: &Option<PathBuf>, bias: bool, name: &str, out: &mut Outcome| -> Result<Checkpoint> {
                match path {
                    Some(p) => load_checkpoint(p, &mut out.inputs),
                    None => {
                        if pairs.is_none() {
                            pairs = Some(single_pairs(cfg, &training_volumes(cfg)?)?);
                        }
                        let c = train_on_pairs(cfg, pairs.as_ref().unwrap(), &spec_with_bias(cfg, bias))?;
                        save_checkpoint(dir.join(format!("{name}.ckpt")), &c, out)?;
                        Ok(c)
                    }
                }
            };
            let free = twin(bias_free, false, "model_bias_free", &mut out)?;
            let with = twin(biased, true, "model_biased", &mut out)?;
            let report = ablation_report(&free, &with, cfg)?;
            write_text(dir.join("ablation.csv"), &report.csv, &mut out)?;
            write_text(dir.join("ablation.json"), &to_json(&report.summary)?, &mut out)?;
        }
        Command::EstimateGain { input, patch } => {
            let v = read_input(input, &mut out.inputs)?;
            let gain = estimate_gain(&v, *patch)?;
            println!("{gain}");
            write_text(
                dir.join("gain.json"),
                &to_json(&serde_json::json!({ "gain": gain, "patch": patch }))?,
                &mut out,
            )?;
        }
        Command::Clahe { input, tile, clip_limit, bins } => {
            let v = read_input(input, &mut out.inputs)?;
            let c = ClaheConfig {
                tile: *tile,
                clip_limit: *clip_limit,
                bins: *bins,
            };
            let planes = v.planes().iter().map(|p| clahe(p, &c)).collect::<Result<Vec<_>>>()?;
            let y = Volume::new(planes, v.depth_step_um())?;
            write_stack(dir.join("clahe.tif"), &y, &mut out)?;
        }
        Command::InitConfig => {
            let path = dir.join("config.json");
            cfg.save(&path)?;
            out.outputs.push(path);
        }
        Command::Rerun { .. } => {
            return Err(HarnessError::InvalidParameter("rerun is handled by `run`".into()));
        }
    }
    Ok(out)
}

fn csv_from_rows(rows: &[MetricsRow]) -> Result<String> {
    let mut s = String::from("variant,depth_index,wci,pci,ssim_vs_ref,iou_vs_gt\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant,
            r.depth_index,
            r.wci,
            r.pci,
            opt(r.ssim_vs_ref),
            opt(r.iou_vs_gt)
        ));
    }
    Ok(s)
}

#[derive(Debug, Serialize)]
pub struct AblationSummary {
    pub bias_free_offset_params: usize,
    pub biased_offset_params: usize,
    pub bias_free_passes_zero_offset_check: bool,
    pub biased_passes_zero_offset_check: bool,
    pub mean_output_ssim: f64,
    pub bias_free_best_val_loss: f64,
    pub biased_best_val_loss: f64,
}

pub struct AblationReport {
    pub summary: AblationSummary,
    pub csv: String,
}

/// Structural offset check plus per-depth agreement and contrast of the
/// two twins' single-pass outputs on the held-out phantoms.
pub fn ablation_report(free: &Checkpoint, biased: &Checkpoint, cfg: &ExperimentConfig) -> Result<AblationReport> {
    let (mf, mb) = (free.model()?, biased.model()?);
    let mut csv = String::from("phantom,depth_index,output_ssim,pci_bias_free,pci_biased,wci_bias_free,wci_biased\n");
    let mut all = Vec::new();
    for (j, ph) in eval_phantoms(cfg)?.iter().enumerate() {
        let agreement = output_agreement(&mf, &mb, &ph.raw, &cfg.inference)?;
        let one = cfg.inference.with_iterations(1);
        let yf = &enhance_iterative(&mf, &ph.raw, &one)?[0];
        let yb = &enhance_iterative(&mb, &ph.raw, &one)?[0];
        for (z, s) in agreement.iter().enumerate() {
            let indices = |p: &contrast_core::Plane| -> Result<(f64, f64)> {
                Ok((defined_or_nan(pci(p))?, defined_or_nan(wci(p))?))
            };
            let ((pf, wf), (pb, wb)) = (indices(yf.plane(z))?, indices(yb.plane(z))?);
            csv.push_str(&format!("{j},{z},{s},{pf},{pb},{wf},{wb}\n"));
        }
        all.extend(agreement);
    }
    let (of, ob) = (mf.offset_param_count(), mb.offset_param_count());
    Ok(AblationReport {
        summary: AblationSummary {
            bias_free_offset_params: of,
            biased_offset_params: ob,
            bias_free_passes_zero_offset_check: of == 0,
            biased_passes_zero_offset_check: ob == 0,
            mean_output_ssim: contrast_core::metrics::stats::mean(&all),
            bias_free_best_val_loss: free.history.best_val_loss,
            biased_best_val_loss: biased.history.best_val_loss,
        },
        csv,
    })
}

/// Resolves the config, executes the command and writes `run-manifest.json`
/// into the output directory. `rerun` repeats a recorded run (optionally into
/// another `--output-dir`) and fails unless every output matches.
pub fn run(cli: &Cli) -> Result<RunManifest> {
    let (command, cfg) = match &cli.command {
        Command::Rerun { manifest } => {
            let recorded = RunManifest::load(manifest)?;
            recorded.verify_inputs()?;
            let mut cfg = recorded.config.clone();
            if let Some(dir) = &cli.global.output_dir {
                cfg.output_dir = dir.clone();
            }
            let fresh = record(&recorded.command, &cfg)?;
            for (old, new) in recorded.outputs.iter().zip(&fresh.outputs) {
                if old != new {
                    return Err(HarnessError::InvalidParameter(format!(
                        "rerun output {} differs from the recorded run",
                        new.path.display()
                    )));
                }
            }
            if recorded.outputs.len() != fresh.outputs.len() {
                return Err(HarnessError::InvalidParameter("rerun produced a different set of outputs".into()));
            }
            return Ok(fresh);
        }
        c => (c.clone(), resolve_config(&cli.global)?),
    };
    record(&command, &cfg)
}

fn record(command: &Command, cfg: &ExperimentConfig) -> Result<RunManifest> {
    let outcome = execute(command, cfg)?;
    let dir = &cfg.output_dir;
    let outputs = outcome
        .outputs
        .iter()
        .map(|p| {
            let mut r = FileRecord::of(p)?;
            r.path = p.strip_prefix(dir).unwrap_or(p).to_path_buf();
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        schema_version: crate::config::SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.clone(),
        config: cfg.clone(),
        deterministic: deterministic_requested(),
        inputs: outcome.inputs.iter().map(|p| FileRecord::of(p)).collect::<Result<_>>()?,
        outputs,
    };
    manifest.save(dir)?;
    Ok(manifest)
}
