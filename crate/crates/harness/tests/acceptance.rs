//! End-to-end acceptance suite. Prints one verdict line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Criteria 6, 7, 8 and 9 share two desk-profile trainings (Model A on
//! `(d, x)`, Model B on `(e, d)`), which dominate the runtime.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::Parser;
use contrast_core::degrade::{degrade_plane, gaussian_blur_array, poisson_noise_array, DegradationConfig};
use contrast_core::metrics::{haar_dwt2, haar_idwt2, pci, ssim, wci};
use contrast_core::rng::{substream, Pass};
use contrast_core::tiff_io::{read_volume, write_volume, OutputDtype};
use contrast_core::{Plane, Volume};
use contrast_harness::cli::{run, Cli};
use contrast_harness::experiment::{
    double_degradation_table, eval_phantoms, double_pairs, enhancement_series, segmentation_sweep, single_pairs,
    summarize_contrast, train_on_pairs, training_volumes,
};
use contrast_harness::manifest::{sha256_file, DETERMINISTIC_ENV, MANIFEST_FILE};
use contrast_harness::ExperimentConfig;
use contrast_net::infer::{enhance_plane, identity_stub};
use contrast_net::optim::{Adam, AdamConfig};
use contrast_net::real::Real;
use contrast_net::{enhance_iterative, Checkpoint, InferenceConfig, ModelSpec, PatchSampler, Tensor, TrainConfig, Unet};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

type Outcome = Result<Verdict, Box<dyn std::error::Error>>;

fn random_array(rng: &mut ChaCha8Rng, h: usize, w: usize, scale: f32) -> Array2<f32> {
    Array2::from_shape_fn((h, w), |_| scale * rng.random::<f32>())
}

fn random_tensor<F: Real>(rng: &mut ChaCha8Rng, n: usize, side: usize) -> Tensor<F> {
    Tensor::from_vec(n, 1, side, side, (0..n * side * side).map(|_| F::of(rng.random::<f64>())).collect())
}

fn bits(a: &Array2<f32>) -> Vec<u32> {
    a.iter().map(|v| v.to_bits()).collect()
}

fn max_abs_diff(a: &Array2<f32>, b: &Array2<f32>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

// 1. Degradation equals the manual blend of input and noised blur.
fn degradation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Plane::new(random_array(&mut rng, 128, 128, 1000.0), 0)?;
    let cfg = DegradationConfig { seed: 42, ..Default::default() };
    let mut worst = 0usize;
    for alpha in [0.0, 0.25, 0.5, 1.0] {
        let got = degrade_plane(&x, alpha, &cfg, &mut substream(cfg.seed, Pass::FIRST, 0))?;
        let blurred = gaussian_blur_array(x.pixels().view(), cfg.sigma_px)?;
        let noisy = poisson_noise_array(blurred.view(), cfg.gain, &mut substream(cfg.seed, Pass::FIRST, 0))?;
        let (a, b) = (alpha as f32, 1.0 - alpha as f32);
        let want = ndarray::Zip::from(x.pixels()).and(&noisy).map_collect(|&xv, &nv| a * xv + b * nv);
        worst += bits(got.pixels()).iter().zip(bits(&want)).filter(|(a, b)| *a != b).count();
        if alpha == 1.0 {
            worst += (got.pixels() != x.pixels()) as usize;
        }
    }
    Ok(verdict(worst == 0, format!("{worst} mismatching pixels over alpha 0, 0.25, 0.5, 1")))
}

// 2. Haar reconstruction and energy.
fn haar_transform() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut recon, mut energy) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let x = Array2::from_shape_fn((128, 128), |_| rng.random_range(-100.0..100.0));
        let dec = haar_dwt2(x.view(), 4)?;
        let back = haar_idwt2(&dec);
        recon = recon.max(x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let e: f64 = x.iter().map(|v| v * v).sum();
        energy = energy.max((dec.energy() - e).abs() / e);
    }
    Ok(verdict(
        recon <= 1e-6 && energy <= 1e-6,
        format!("max reconstruction error {recon:.2e}, max relative energy error {energy:.2e}"),
    ))
}

/// Brute-force orthonormal Haar detail magnitudes, levels 1..=4.
fn oracle_details(x: &Array2<f64>) -> Vec<f64> {
    let mut cur = x.clone();
    let mut out = Vec::new();
    for _ in 0..4 {
        let (h, w) = (cur.nrows() / 2, cur.ncols() / 2);
        let mut next = Array2::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                let (a, b) = (cur[[2 * i, 2 * j]], cur[[2 * i, 2 * j + 1]]);
                let (c, d) = (cur[[2 * i + 1, 2 * j]], cur[[2 * i + 1, 2 * j + 1]]);
                next[[i, j]] = (a + b + c + d) / 2.0;
                out.push(((a - b + c - d) / 2.0).abs());
                out.push(((a + b - c - d) / 2.0).abs());
                out.push(((a - b - c + d) / 2.0).abs());
            }
        }
        cur = next;
    }
    out
}

fn oracle_log_ratio(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p / 100.0 * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    (q(95.0) / q(50.0)).ln()
}

// 3. WCI, PCI and SSIM against independent recomputation.
fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut wci_err, mut pci_err, mut scale_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let a = random_array(&mut rng, 128, 128, 1000.0).mapv(|v| v + 1.0);
        let p = Plane::new(a.clone(), 0)?;
        let x = a.mapv(|v| v as f64);
        wci_err = wci_err.max((wci(&p)? - oracle_log_ratio(oracle_details(&x))).abs());
        pci_err = pci_err.max((pci(&p)? - oracle_log_ratio(x.iter().copied().collect())).abs());
        // Power-of-two factors scale f32 pixels exactly.
        for c in [0.25f32, 4.0] {
            let scaled = Plane::new(a.mapv(|v| v * c), 0)?;
            scale_err = scale_err.max((pci(&scaled)? - pci(&p)?).abs()).max((wci(&scaled)? - wci(&p)?).abs());
        }
    }
    let mut ssim_self_exact = true;
    let mut mean_ssim = [0.0f64; 3];
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let a = Array2::from_shape_fn((128, 128), |(i, j)| ((i as f32) * 0.2).sin() * ((j as f32) * 0.15).cos() * 50.0 + 100.0 + rng.random::<f32>());
        let p = Plane::new(a.clone(), 0)?;
        ssim_self_exact &= ssim(&p, &p)? == 1.0;
        let range = (a.iter().cloned().fold(f32::MIN, f32::max) - a.iter().cloned().fold(f32::MAX, f32::min)) as f64;
        for (slot, level) in [0.01, 0.05, 0.1].into_iter().enumerate() {
            let noise = Normal::new(0.0, level * range)?;
            let n = a.mapv(|v| v + noise.sample(&mut rng) as f32);
            mean_ssim[slot] += ssim(&p, &Plane::new_raw(n, 0)?)? / 10.0;
        }
    }
    let decreasing = mean_ssim[0] > mean_ssim[1] && mean_ssim[1] > mean_ssim[2];
    Ok(verdict(
        wci_err <= 1e-9 && pci_err <= 1e-9 && scale_err <= 1e-9 && ssim_self_exact && decreasing,
        format!(
            "WCI err {wci_err:.1e}, PCI err {pci_err:.1e}, scale err {scale_err:.1e}, SSIM(x,x)=1 {ssim_self_exact}, SSIM by noise {:.4} > {:.4} > {:.4}",
            mean_ssim[0], mean_ssim[1], mean_ssim[2]
        ),
    ))
}

// 4. Zero offsets and positive homogeneity.
fn bias_free_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let free = Unet::<f32>::new(ModelSpec::desk(), 7)?;
    let biased = Unet::<f32>::new(ModelSpec { bias_free: false, ..ModelSpec::desk() }, 7)?;
    let x = random_tensor::<f32>(&mut rng, 2, 64);
    let y = free.forward(&x)?;
    let scale = y.data.iter().fold(0.0f64, |m, v| m.max(v.abs() as f64));
    let mut worst = 0.0f64;
    for a in [0.5f32, 2.0, 10.0] {
        let ya = free.forward(&x.map(|v| v * a))?;
        let err = ya.data.iter().zip(&y.data).map(|(p, q)| (p - q * a).abs() as f64).fold(0.0, f64::max);
        worst = worst.max(err / (scale * a as f64));
    }
    let (n_free, n_biased) = (free.offset_param_count(), biased.offset_param_count());
    Ok(verdict(
        n_free == 0 && n_biased > 0 && worst < 1e-4,
        format!("offsets: bias-free {n_free}, biased twin {n_biased}; homogeneity error {worst:.1e}"),
    ))
}

// 5. Finite differences on a tiny double-precision model. Perturbations
// that cross a kink of the piecewise-linear loss are redrawn.
fn gradient_check() -> Outcome {
    let spec = ModelSpec {
        depth: 1,
        base_channels: 4,
        ..ModelSpec::paper()
    };
    let model = Unet::<f64>::new(spec, 11)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor::<f64>(&mut rng, 2, 16);
    let target = random_tensor::<f64>(&mut rng, 2, 16);
    let (_, grads) = model.mae_loss_and_grad(&x, &target)?;
    let mut analytic = Vec::new();
    model.clone().for_each_param_mut(&grads, |_, _, g| analytic.push(g));
    let base = model.flat_params();
    let sig0 = model.kink_signature(&x, &target)?;
    let h = 1e-3;
    let (mut checked, mut redrawn, mut worst) = (0, 0, 0.0f64);
    let mut failures = 0;
    while checked < 50 && redrawn < 500 {
        let i = rng.random_range(0..base.len());
        let eval = |delta: f64| -> Result<(f64, Vec<u32>), contrast_net::NetError> {
            let mut m = model.clone();
            let mut p = base.clone();
            p[i] += delta;
            m.set_flat_params(&p)?;
            Ok((m.mae_loss_and_grad(&x, &target)?.0, m.kink_signature(&x, &target)?))
        };
        let ((lp, sp), (lm, sm)) = (eval(h)?, eval(-h)?);
        if sp != sig0 || sm != sig0 {
            redrawn += 1;
            continue;
        }
        let fd = (lp - lm) / (2.0 * h);
        let denom = fd.abs().max(analytic[i].abs());
        let rel = if denom > 1e-10 { (fd - analytic[i]).abs() / denom } else { 0.0 };
        worst = worst.max(rel);
        failures += (rel > 1e-3) as usize;
        checked += 1;
    }
    Ok(verdict(
        checked == 50 && failures == 0,
        format!("{checked} parameters checked ({redrawn} redrawn), worst relative error {worst:.1e}"),
    ))
}

struct Trained {
    cfg: ExperimentConfig,
    a: Checkpoint,
    b: Checkpoint,
    a_seconds: f64,
    b_seconds: f64,
}

fn overfit_single_batch(cfg: &ExperimentConfig, pair: (Volume, Volume)) -> Result<(f64, f64), Box<dyn std::error::Error>> {
    let tc = TrainConfig { batch_size: 4, ..cfg.training.clone() };
    let batch = PatchSampler::new(&[pair], &tc)?.next_batch();
    let mut model = Unet::<f32>::new(cfg.model.clone(), 0)?;
    let mut adam = Adam::new(AdamConfig::default(), model.param_count());
    let (mut first, mut last) = (None, 0.0);
    for _ in 0..200 {
        let (loss, g) = model.mae_loss_and_grad(&batch.inputs, &batch.targets)?;
        first.get_or_insert(loss);
        last = loss;
        adam.update(&mut model, &g, 1e-3);
    }
    Ok((first.unwrap_or(0.0), last))
}

// 6. Training sanity on the desk profile.
fn training_sanity(t: &Trained, overfit: (f64, f64), overfit_seconds: f64) -> Outcome {
    let h = &t.a.history;
    let ratio = h.best_val_loss / h.identity_val_loss;
    let reduction = 1.0 - overfit.1 / overfit.0;
    let seconds = t.a_seconds + overfit_seconds;
    Ok(verdict(
        ratio <= 0.5 && reduction >= 0.8 && seconds <= 1800.0,
        format!(
            "Model A val MAE {:.4} vs identity {:.4} (ratio {ratio:.3}); single-batch loss {:.4} -> {:.4} ({:.0}% reduction); {seconds:.0} s",
            h.best_val_loss,
            h.identity_val_loss,
            overfit.0,
            overfit.1,
            100.0 * reduction
        ),
    ))
}

// 7. Mean PCI and WCI rise over raw, DC1, DC2, DC3 on held-out phantoms.
fn contrast_trend(t: &Trained, model: &Unet<f32>) -> Outcome {
    let eval = eval_phantoms(&t.cfg)?;
    let mut pci_means = vec![0.0; 4];
    let mut wci_means = vec![0.0; 4];
    let mut planes = 0;
    for ph in &eval {
        let series = enhancement_series(model, &ph.raw, &t.cfg.inference, 3)?;
        for (k, s) in summarize_contrast(&series)?.iter().enumerate() {
            pci_means[k] += s.mean_pci * s.n_planes as f64;
            wci_means[k] += s.mean_wci * s.n_planes as f64;
        }
        planes += ph.raw.len();
    }
    for v in pci_means.iter_mut().chain(wci_means.iter_mut()) {
        *v /= planes as f64;
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" < ");
    Ok(verdict(
        planes >= 16 && strictly_increasing(&pci_means) && strictly_increasing(&wci_means),
        format!("{planes} slices; PCI {}; WCI {}", fmt(&pci_means), fmt(&wci_means)),
    ))
}

// 8. Rise-then-fall of best-threshold IoU over iterations.
fn detail_loss(t: &Trained, model: &Unet<f32>) -> Outcome {
    let sweep = segmentation_sweep(model, &eval_phantoms(&t.cfg)?, &t.cfg)?;
    let iou: Vec<f64> = sweep.per_k.iter().map(|s| s.mean_iou).collect();
    let k = sweep.selected_k;
    let last = *iou.last().unwrap_or(&0.0);
    Ok(verdict(
        (1..=5).contains(&k) && iou.len() == 7 && iou[k] >= iou[0] && iou[k] >= last,
        format!(
            "k* = {k}; mean IoU by k: {}",
            iou.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", ")
        ),
    ))
}

// 9. Double-degradation SSIM columns increase left to right.
fn double_degradation(t: &Trained, a: &Unet<f32>, b: &Unet<f32>, started: Instant) -> Outcome {
    let xs: Vec<Volume> = eval_phantoms(&t.cfg)?.into_iter().map(|p| p.raw).collect();
    let report = double_degradation_table(a, b, &xs, &t.cfg)?;
    let c = report.overall;
    let seconds = t.a_seconds + t.b_seconds + started.elapsed().as_secs_f64();
    let bands = report
        .bands
        .iter()
        .map(|b| format!("{} {:.3}/{:.3}/{:.3}", b.band, b.mean[0], b.mean[1], b.mean[2]))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(verdict(
        c[1] - c[0] >= 0.02 && c[2] - c[1] >= 0.02 && seconds <= 3600.0,
        format!("mean SSIM {:.3} < {:.3} < {:.3}; {seconds:.0} s; by band: {bands}", c[0], c[1], c[2]),
    ))
}

// 10. Plumbing: identity stub, tiling, manifest rerun, float32 TIFF.
fn plumbing(model: &Unet<f32>, ckpt: &Checkpoint) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let vol = Volume::from_arrays((0..4).map(|_| random_array(&mut rng, 128, 128, 500.0).mapv(|v| v + 10.0)).collect())?;

    let stub = identity_stub(8);
    let iterated = enhance_iterative(&stub, &vol, &InferenceConfig::default().with_iterations(6))?;
    let stub_err = vol
        .planes()
        .iter()
        .zip(iterated[5].planes())
        .map(|(a, b)| max_abs_diff(a.pixels(), b.pixels()))
        .fold(0.0, f64::max);

    let whole = InferenceConfig::default();
    let tiled = InferenceConfig { tile_size: 64, tile_overlap: 16, ..whole.clone() };
    let mut tile_err = 0.0f64;
    for p in vol.planes().iter().take(2) {
        let a = enhance_plane(model, p, &whole)?;
        let b = enhance_plane(model, p, &tiled)?;
        let range = a.pixels().iter().fold(f32::MIN, |m, &v| m.max(v)) - a.pixels().iter().fold(f32::MAX, |m, &v| m.min(v));
        tile_err = tile_err.max(max_abs_diff(a.pixels(), b.pixels()) / range as f64);
    }

    let tmp = tempfile::tempdir()?;
    let dir = tmp.path();
    let tif = dir.join("stack.tif");
    write_volume(&vol, &tif, OutputDtype::Float32)?;
    let back = read_volume(&tif)?;
    let tiff_exact = back.len() == vol.len() && back.planes().iter().zip(vol.planes()).all(|(a, b)| bits(a.pixels()) == bits(b.pixels()));

    let rerun_exact = manifest_rerun(dir, ckpt, &tif)?;
    Ok(verdict(
        stub_err <= 1e-4 && tile_err < 1e-4 && rerun_exact && tiff_exact,
        format!(
            "identity stub k=6 max error {stub_err:.1e}; tiled vs whole {tile_err:.1e} of range; rerun bit-exact {rerun_exact}; float32 TIFF bit-exact {tiff_exact}"
        ),
    ))
}

fn manifest_rerun(dir: &Path, ckpt: &Checkpoint, input: &Path) -> Result<bool, Box<dyn std::error::Error>> {
    std::env::set_var(DETERMINISTIC_ENV, "1");
    let ck = dir.join("model.ckpt");
    ckpt.save(&ck)?;
    let first_dir = dir.join("first");
    let first = run(&Cli::try_parse_from([
        "contrast",
        "--output-dir",
        first_dir.to_str().unwrap_or_default(),
        "enhance",
        "--checkpoint",
        ck.to_str().unwrap_or_default(),
        "--input",
        input.to_str().unwrap_or_default(),
        "--iterations",
        "2",
    ])?)?;
    let again_dir = dir.join("again");
    let again = run(&Cli::try_parse_from([
        "contrast",
        "--output-dir",
        again_dir.to_str().unwrap_or_default(),
        "rerun",
        "--manifest",
        first_dir.join(MANIFEST_FILE).to_str().unwrap_or_default(),
    ])?)?;
    let mut same = first.deterministic && !first.outputs.is_empty() && first.outputs == again.outputs;
    for rec in &first.outputs {
        same &= sha256_file(&again_dir.join(&rec.path))? == rec.sha256;
    }
    Ok(same)
}

fn train_models(cfg: &ExperimentConfig) -> Result<(Trained, (Volume, Volume)), Box<dyn std::error::Error>> {
    let raw = training_volumes(cfg)?;
    let t0 = Instant::now();
    let singles = single_pairs(cfg, &raw)?;
    let a = train_on_pairs(cfg, &singles, &cfg.model)?;
    let a_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let b = train_on_pairs(cfg, &double_pairs(cfg, &raw)?, &cfg.model)?;
    let b_seconds = t1.elapsed().as_secs_f64();
    let first = singles.into_iter().next().ok_or("no training phantoms")?;
    Ok((Trained { cfg: cfg.clone(), a, b, a_seconds, b_seconds }, first))
}

fn report(id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let within = limit.is_none_or(|l| elapsed <= l);
    let (pass, detail) = match outcome {
        Ok(v) => (v.pass && within, v.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "criterion {id:>2} [{}] {name}: {detail} ({:.1} s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let secs = Duration::from_secs;
    let mut all = true;
    all &= report(1, "degradation oracle", Some(secs(5)), degradation_oracle);
    all &= report(2, "Haar transform", Some(secs(5)), haar_transform);
    all &= report(3, "metric oracles", Some(secs(10)), metric_oracles);
    all &= report(4, "bias-free structure", Some(secs(30)), bias_free_structure);
    all &= report(5, "gradient check", Some(secs(120)), gradient_check);

    let cfg = ExperimentConfig::desk();
    println!("training Model A and Model B on the desk profile ...");
    let trained = train_models(&cfg);
    let (trained, first_pair) = match trained {
        Ok(t) => t,
        Err(e) => {
            for (id, name) in [(6, "training sanity"), (7, "contrast trend"), (8, "detail loss"), (9, "double degradation"), (10, "plumbing")] {
                println!("criterion {id:>2} [FAIL] {name}: training failed: {e}");
            }
            return ExitCode::FAILURE;
        }
    };
    let (model_a, model_b) = match (trained.a.model(), trained.b.model()) {
        (Ok(a), Ok(b)) => (a, b),
        _ => {
            println!("could not rebuild trained models from their checkpoints");
            return ExitCode::FAILURE;
        }
    };
    all &= report(6, "training sanity", None, || {
        let t = Instant::now();
        let overfit = overfit_single_batch(&cfg, first_pair)?;
        training_sanity(&trained, overfit, t.elapsed().as_secs_f64())
    });
    all &= report(7, "contrast trend", Some(secs(300)), || contrast_trend(&trained, &model_a));
    all &= report(8, "detail loss", Some(secs(600)), || detail_loss(&trained, &model_a));
    let started = Instant::now();
    all &= report(9, "double degradation", None, || double_degradation(&trained, &model_a, &model_b, started));
    all &= report(10, "plumbing", Some(secs(120)), || plumbing(&model_a, &trained.a));

    if all {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("some acceptance criteria failed");
        ExitCode::FAILURE
    }
}
