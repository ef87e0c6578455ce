use contrast_core::degrade::{degrade_plane, degrade_volume, double_degrade, degrade_volume_pass, DegradationConfig};
use contrast_core::metrics::pci;
use contrast_core::phantom::{generate, PhantomConfig};
use contrast_core::rng::{substream, Pass};
use contrast_core::{Plane, Volume};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_plane(seed: u64, h: usize, w: usize, scale: f32) -> Plane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Plane::new(Array2::from_shape_fn((h, w), |_| scale * rng.random::<f32>()), 0).unwrap()
}

fn config(seed: u64, gain: f64, sigma: f64) -> DegradationConfig {
    DegradationConfig {
        sigma_px: sigma,
        gain,
        seed,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // d_α(x) = α·x + (1 − α)·d₀(x) with the same noise draw.
    #[test]
    fn linear_in_alpha(seed in 0u64..10_000, gain in 0.05f64..5.0, scale in 1.0f32..2000.0) {
        let x = random_plane(seed, 24, 20, scale);
        let cfg = config(seed, gain, 3.0);
        let d0 = degrade_plane(&x, 0.0, &cfg, &mut substream(seed, Pass::FIRST, 0)).unwrap();
        for alpha in [0.0, 0.25, 0.5, 1.0] {
            let got = degrade_plane(&x, alpha, &cfg, &mut substream(seed, Pass::FIRST, 0)).unwrap();
            let a = alpha as f32;
            let b = 1.0 - a;
            for (i, (&g, (&xv, &nv))) in got.pixels().iter().zip(x.pixels().iter().zip(d0.pixels())).enumerate() {
                let want = a * xv + b * nv;
                prop_assert_eq!(g.to_bits(), want.to_bits(), "alpha {} pixel {}", alpha, i);
            }
        }
    }

    #[test]
    fn output_is_finite_and_deterministic(seed in 0u64..10_000, gain in 0.01f64..50.0, scale in 0.0f32..60_000.0) {
        let vol = Volume::from_arrays(
            (0..3).map(|z| random_plane(seed + z, 16, 18, scale).into_pixels()).collect(),
        ).unwrap();
        let cfg = config(seed, gain, 2.0);
        let a = degrade_volume(&vol, &cfg).unwrap();
        let b = degrade_volume(&vol, &cfg).unwrap();
        for (pa, pb) in a.planes().iter().zip(b.planes()) {
            prop_assert!(pa.pixels().iter().all(|v| v.is_finite()));
            let bits_a: Vec<u32> = pa.pixels().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = pb.pixels().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits_a, bits_b);
        }
    }
}

#[test]
fn alpha_one_everywhere_is_identity() {
    let vol = Volume::from_arrays((0..4).map(|z| random_plane(z, 16, 16, 500.0).into_pixels()).collect()).unwrap();
    let cfg = DegradationConfig {
        alpha_top: 1.0,
        alpha_bottom: 1.0,
        ..config(9, 0.1, 20.0)
    };
    let (d, e) = double_degrade(&vol, &cfg).unwrap();
    for ((x, dp), ep) in vol.planes().iter().zip(d.planes()).zip(e.planes()) {
        assert_eq!(x.pixels(), dp.pixels());
        assert_eq!(x.pixels(), ep.pixels());
    }
}

#[test]
fn second_degradation_is_recomposable() {
    let vol = Volume::from_arrays((0..5).map(|z| random_plane(z + 40, 20, 20, 300.0).into_pixels()).collect()).unwrap();
    let cfg = config(17, 0.3, 4.0);
    let (d, e) = double_degrade(&vol, &cfg).unwrap();
    let again = degrade_volume_pass(&d, &cfg, Pass::SECOND).unwrap();
    for (a, b) in e.planes().iter().zip(again.planes()) {
        assert_eq!(a.pixels(), b.pixels());
    }
}

#[test]
fn double_degradation_lowers_contrast_on_phantoms() {
    let phantom = generate(&PhantomConfig { seed: 3, ..Default::default() }).unwrap();
    let cfg = config(5, 0.1, 20.0);
    let (d, e) = double_degrade(&phantom.raw, &cfg).unwrap();
    let mean_pci = |v: &Volume| v.planes().iter().map(|p| pci(p).unwrap()).sum::<f64>() / v.len() as f64;
    let (pd, pe) = (mean_pci(&d), mean_pci(&e));
    assert!(pe < pd, "PCI(e) {pe} should be below PCI(d) {pd}");
}
