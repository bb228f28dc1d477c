use std::f64::consts::PI;

use sonar_atr::noise::{apply_speckle, corrupt_rayleigh, psnr, rayleigh_mean, NoiseConfig, NoiseLevel, PixelRange};
use sonar_atr::raster::Raster;
use sonar_atr::rng::SplitMix64;
use sonar_atr::synthgen::{generate_scene, SceneSpec};

fn oracle_psnr(a: &Raster, b: &Raster) -> f64 {
    let n = a.data().len() as f64;
    let mse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
    let peak = a.data().iter().copied().fold(f64::MIN, f64::max);
    10.0 * (peak * peak / mse).log10()
}

#[test]
fn standard_scene_hits_target_psnr() {
    let scene = generate_scene(&SceneSpec::standard(3)).unwrap();
    for target in [35.0, 25.0] {
        for seed in 0..3 {
            let cfg = NoiseConfig { level: NoiseLevel::TargetPsnr(target), seed };
            let out = corrupt_rayleigh(&scene.image, &cfg, PixelRange::Real).unwrap();
            let got = oracle_psnr(&scene.image, &out.image);
            assert!((got - target).abs() <= 0.5, "target {target} seed {seed}: {got}");
            assert!((got - out.achieved_psnr).abs() < 1e-9);
        }
    }
}

#[test]
fn normalized_rayleigh_mean_is_one() {
    let sigma = 0.7;
    let mut rng = SplitMix64::new(2024);
    let n = 1_000_000;
    let mean = (0..n).map(|_| rng.rayleigh(sigma)).sum::<f64>() / n as f64;
    assert!((mean / rayleigh_mean(sigma) - 1.0).abs() <= 0.002);
    assert!((rayleigh_mean(sigma) - sigma * (PI / 2.0).sqrt()).abs() < 1e-15);
}

#[test]
fn speckle_factor_has_unit_mean() {
    let flat = Raster::filled(1000, 1000, 1.0).unwrap();
    let out = apply_speckle(&flat, 0.3, 9, PixelRange::Real);
    assert!((out.mean() - 1.0).abs() <= 0.002, "{}", out.mean());
}

#[test]
fn stronger_noise_lowers_psnr() {
    let scene = generate_scene(&SceneSpec::standard(1)).unwrap();
    let mut last = f64::INFINITY;
    for sigma in [0.01, 0.05, 0.2, 0.5] {
        let out = corrupt_rayleigh(&scene.image, &NoiseConfig { level: NoiseLevel::Sigma(sigma), seed: 4 }, PixelRange::Real).unwrap();
        let p = psnr(&scene.image, &out.image).unwrap();
        assert!(p < last);
        last = p;
    }
}

#[test]
fn eight_bit_range_stays_in_bounds() {
    let img = Raster::new(4, 1, vec![0.0, 100.0, 200.0, 255.0]).unwrap();
    let out = apply_speckle(&img, 0.9, 1, PixelRange::EightBit);
    for v in out.data() {
        assert!((0.0..=255.0).contains(v) && v.fract() == 0.0);
    }
}

#[test]
fn same_seed_same_noise() {
    let scene = generate_scene(&SceneSpec::standard(2)).unwrap();
    let cfg = NoiseConfig { level: NoiseLevel::TargetPsnr(30.0), seed: 77 };
    let a = corrupt_rayleigh(&scene.image, &cfg, PixelRange::Real).unwrap();
    let b = corrupt_rayleigh(&scene.image, &cfg, PixelRange::Real).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_levels_rejected() {
    let img = Raster::filled(8, 8, 1.0).unwrap();
    assert!(corrupt_rayleigh(&img, &NoiseConfig { level: NoiseLevel::Sigma(-1.0), seed: 0 }, PixelRange::Real).is_err());
    assert!(corrupt_rayleigh(&img, &NoiseConfig { level: NoiseLevel::TargetPsnr(f64::NAN), seed: 0 }, PixelRange::Real).is_err());
}
