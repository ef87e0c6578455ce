use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use contrast_core::metrics::{pci, wci};
use contrast_core::tiff_io::read_volume;
use contrast_harness::cli::{run, Cli};
use contrast_harness::experiment::{ablation_free_check, double_degradation_table, metrics_rows};
use contrast_harness::manifest::{sha256_file, RunManifest, MANIFEST_FILE};
use contrast_harness::ExperimentConfig;
use contrast_net::checkpoint::Provenance;
use contrast_net::{Checkpoint, ModelSpec, TrainConfig, TrainingHistory, Unet};

const SMALL: [&str; 8] = [
    "--set",
    "phantom.width=32",
    "--set",
    "phantom.height=32",
    "--set",
    "phantom.n_slices=4",
    "--set",
    "phantom.n_cells=6",
];

fn contrast(dir: &Path, args: &[&str]) -> RunManifest {
    let mut argv = vec!["contrast", "--output-dir", dir.to_str().unwrap()];
    argv.extend_from_slice(&SMALL);
    argv.extend_from_slice(args);
    run(&Cli::try_parse_from(argv).unwrap()).unwrap()
}

fn tiny_checkpoint(path: &Path, bias_free: bool) -> Checkpoint {
    let spec = ModelSpec {
        depth: 2,
        base_channels: 4,
        bias_free,
        ..ModelSpec::desk()
    };
    let c = Checkpoint::new(
        &Unet::new(spec, 3).unwrap(),
        TrainConfig::desk(),
        TrainingHistory::default(),
        Provenance {
            dataset_sha256: String::new(),
            code_version: "test".into(),
            seed: 3,
        },
    );
    c.save(path).unwrap();
    c
}

fn bytes(p: PathBuf) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn phantom_runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ma = contrast(&a, &["--seed", "7", "phantom"]);
    let mb = contrast(&b, &["--seed", "7", "phantom"]);
    assert_eq!(ma.outputs, mb.outputs);
    assert_eq!(ma.outputs.len(), 3);
    for f in ["phantom_00_clean.tif", "phantom_00_raw.tif", "phantom_00_masks.tif"] {
        assert_eq!(bytes(a.join(f)), bytes(b.join(f)));
    }
    assert!(a.join(MANIFEST_FILE).exists());
    assert_eq!(ma.config.phantom.seed, 7);
}

#[test]
fn iterated_enhancement_composes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    contrast(&dir.join("ph"), &["phantom"]);
    let ckpt = dir.join("m.ckpt");
    tiny_checkpoint(&ckpt, true);
    let raw = dir.join("ph/phantom_00_raw.tif");
    let c = ckpt.to_str().unwrap();

    contrast(&dir.join("k3"), &["enhance", "--checkpoint", c, "--input", raw.to_str().unwrap(), "--iterations", "3"]);
    let mut input = raw.clone();
    for step in 0..3 {
        let out = dir.join(format!("step{step}"));
        contrast(&out, &["enhance", "--checkpoint", c, "--input", input.to_str().unwrap(), "--iterations", "1"]);
        input = out.join("enhanced_k1.tif");
    }
    assert!(dir.join("k3/enhanced_k1.tif").exists() && dir.join("k3/enhanced_k2.tif").exists());
    assert_eq!(bytes(dir.join("k3/enhanced_k3.tif")), bytes(input));
}

#[test]
fn metrics_csv_matches_direct_calls() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    contrast(&dir.join("ph"), &["phantom"]);
    let raw = dir.join("ph/phantom_00_raw.tif");
    let variant = format!("raw={}", raw.display());
    contrast(&dir.join("m"), &["metrics", "--variant", &variant]);

    let volume = read_volume(&raw).unwrap();
    let text = std::fs::read_to_string(dir.join("m/metrics_planes.csv")).unwrap();
    let lines: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(lines.len(), volume.len());
    for (z, line) in lines.iter().enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], "raw");
        assert_eq!(f[1].parse::<usize>().unwrap(), z);
        assert_eq!(f[2].parse::<f64>().unwrap(), wci(volume.plane(z)).unwrap());
        assert_eq!(f[3].parse::<f64>().unwrap(), pci(volume.plane(z)).unwrap());
    }
    let direct = metrics_rows("raw", &volume, None, None, 256).unwrap();
    assert_eq!(direct.len(), lines.len());
    assert!(dir.join("m/metrics.csv").exists());
    assert!(dir.join("m/metrics_pci.svg").exists());

    // Plots regenerate identically from the CSV alone.
    let replot = dir.join("replot");
    let csv = dir.join("m/metrics.csv");
    contrast(&replot, &["plot", "--csv", csv.to_str().unwrap()]);
    for m in ["wci", "pci"] {
        let f = format!("metrics_{m}.svg");
        assert_eq!(bytes(dir.join("m").join(&f)), bytes(replot.join(&f)));
    }
}

#[test]
fn manifest_rerun_is_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    contrast(&dir.join("ph"), &["--seed", "3", "phantom"]);
    let raw = dir.join("ph/phantom_00_raw.tif");
    let first = contrast(&dir.join("d1"), &["--seed", "3", "degrade", "--double", "--input", raw.to_str().unwrap()]);
    assert!(!first.outputs.is_empty());

    let manifest = dir.join("d1").join(MANIFEST_FILE);
    let again = run(&Cli::try_parse_from([
        "contrast",
        "--output-dir",
        dir.join("d2").to_str().unwrap(),
        "rerun",
        "--manifest",
        manifest.to_str().unwrap(),
    ])
    .unwrap())
    .unwrap();
    assert_eq!(again.outputs, first.outputs);
    for rec in &first.outputs {
        assert_eq!(sha256_file(&dir.join("d2").join(&rec.path)).unwrap(), rec.sha256);
    }

    // A changed input is refused.
    std::fs::write(&raw, b"not a tiff").unwrap();
    let err = run(&Cli::try_parse_from(["contrast", "rerun", "--manifest", manifest.to_str().unwrap()]).unwrap());
    assert!(err.is_err());
}

#[test]
fn clahe_and_gain_commands_write_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    contrast(
        &dir.join("ph"),
        &["--set", "phantom.width=128", "--set", "phantom.height=128", "phantom"],
    );
    let raw = dir.join("ph/phantom_00_raw.tif");
    contrast(&dir.join("c"), &["clahe", "--input", raw.to_str().unwrap()]);
    assert_eq!(read_volume(dir.join("c/clahe.tif")).unwrap().len(), 4);
    contrast(&dir.join("g"), &["estimate-gain", "--input", raw.to_str().unwrap()]);
    let g: serde_json::Value = serde_json::from_slice(&bytes(dir.join("g/gain.json"))).unwrap();
    assert!(g["gain"].as_f64().unwrap() > 0.0);
}

#[test]
fn degenerate_double_protocol_runs() {
    // Model B := Model A, and the models compare their own shifted iterates.
    let tmp = tempfile::tempdir().unwrap();
    let model = tiny_checkpoint(&tmp.path().join("m.ckpt"), true).model().unwrap();
    let mut cfg = ExperimentConfig::desk();
    cfg.phantom.width = 32;
    cfg.phantom.height = 32;
    cfg.phantom.n_slices = 10;
    let x = contrast_core::phantom::generate(&cfg.phantom).unwrap().raw;
    let report = double_degradation_table(&model, &model, &[x], &cfg).unwrap();
    assert_eq!(report.bands.len(), 5);
    assert!(report.overall.iter().all(|v| v.is_finite()));
    assert!(report.to_csv().lines().count() == 7);
}

#[test]
fn ablation_twins_differ_structurally() {
    let tmp = tempfile::tempdir().unwrap();
    let free = tiny_checkpoint(&tmp.path().join("f.ckpt"), true);
    let biased = tiny_checkpoint(&tmp.path().join("b.ckpt"), false);
    assert!(ablation_free_check(&free).unwrap());
    assert!(!ablation_free_check(&biased).unwrap());
}

#[test]
fn binary_reports_failures() {
    let exe = env!("CARGO_BIN_EXE_contrast");
    let tmp = tempfile::tempdir().unwrap();
    let status = Process::new(exe).arg("bogus").output().unwrap().status;
    assert!(!status.success());
    let status = Process::new(exe)
        .args(["--output-dir", tmp.path().to_str().unwrap(), "degrade", "--input"])
        .arg(tmp.path().join("missing.tif"))
        .output()
        .unwrap()
        .status;
    assert!(!status.success());
    let status = Process::new(exe)
        .args(["--output-dir", tmp.path().to_str().unwrap(), "init-config"])
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(tmp.path().join("config.json").exists());
}
