//! Rayleigh-type multiplicative speckle at a requested PSNR.
//!
//! Each pixel is multiplied by a mean-one factor
//!
//! ```text
//! m = 1 + (R - E[R]),   R ~ Rayleigh(sigma),   E[R] = sigma * sqrt(pi / 2)
//! ```
//!
//! and the result is clipped to the raster's valid range. The factor has
//! standard deviation `sigma * sqrt(2 - pi/2)`, so noise strength grows
//! with `sigma` and vanishes as `sigma -> 0`. Rayleigh draws use the
//! inverse CDF over the [`SplitMix64`] stream, one draw per pixel in
//! row-major order.
//!
//! PSNR is `10 log10(peak^2 / MSE)` with `peak` the reference maximum.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::rng::SplitMix64;

/// Noise seed used while searching for sigma; the final draw uses the caller's seed.
pub const CALIBRATION_SEED: u64 = 0x5EED_CA1B_0000_0001;
pub const SIGMA_MIN: f64 = 1e-6;
pub const SIGMA_MAX: f64 = 10.0;
pub const MAX_BISECTIONS: usize = 60;
/// Bisection stops once the calibration draw is this close to the target (dB).
pub const BISECTION_TOLERANCE_DB: f64 = 0.1;
/// Maximum accepted error of the final draw (dB).
pub const ACCEPT_TOLERANCE_DB: f64 = 0.5;

/// Mean of a Rayleigh(sigma) variable.
pub fn rayleigh_mean(sigma: f64) -> f64 {
    sigma * (PI / 2.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    TargetPsnr(f64),
    Sigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub level: NoiseLevel,
    pub seed: u64,
}

/// Valid value range of the raster being corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelRange {
    /// Real magnitudes: clipped below at 0.
    Real,
    /// 8-bit data: rounded and clipped to `[0, 255]`.
    EightBit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corrupted {
    pub image: Raster,
    pub sigma: f64,
    pub achieved_psnr: f64,
}

/// PSNR in dB; `f64::INFINITY` for identical images.
pub fn psnr(reference: &Raster, test: &Raster) -> Result<f64> {
    if reference.width() != test.width() || reference.height() != test.height() {
        return Err(Error::dim(format!(
            "PSNR of {}x{} against {}x{}",
            reference.width(),
            reference.height(),
            test.width(),
            test.height()
        )));
    }
    let n = reference.data().len() as f64;
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = reference.max();
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Multiplies every pixel by an independent mean-one Rayleigh factor.
pub fn apply_speckle(image: &Raster, sigma: f64, seed: u64, range: PixelRange) -> Raster {
    let mut rng = SplitMix64::new(seed);
    let mean = rayleigh_mean(sigma);
    let data = image
        .data()
        .iter()
        .map(|&v| {
            let m = 1.0 + rng.rayleigh(sigma) - mean;
            let out = (v * m).max(0.0);
            match range {
                PixelRange::Real => out,
                PixelRange::EightBit => out.round().min(255.0),
            }
        })
        .collect();
    Raster::from_parts(image.width(), image.height(), data)
}

pub fn corrupt_rayleigh(image: &Raster, config: &NoiseConfig, range: PixelRange) -> Result<Corrupted> {
    let sigma = match config.level {
        NoiseLevel::Sigma(s) => {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::arg(format!("sigma must be positive, got {s}")));
            }
            s
        }
        NoiseLevel::TargetPsnr(target) => calibrate_sigma(image, target, range)?,
    };
    let out = apply_speckle(image, sigma, config.seed, range);
    let achieved_psnr = psnr(image, &out)?;
    if let NoiseLevel::TargetPsnr(target) = config.level {
        if (achieved_psnr - target).abs() > ACCEPT_TOLERANCE_DB {
            return Err(Error::Calibration(format!(
                "final draw reached {achieved_psnr:.2} dB, target {target} dB"
            )));
        }
    }
    Ok(Corrupted {
        image: out,
        sigma,
        achieved_psnr,
    })
}

/// Bisection on sigma in `[SIGMA_MIN, SIGMA_MAX]` against the PSNR of a
/// fixed-seed draw.
pub fn calibrate_sigma(image: &Raster, target_db: f64, range: PixelRange) -> Result<f64> {
    if !(target_db > 0.0 && target_db.is_finite()) {
        return Err(Error::arg(format!("PSNR target must be positive, got {target_db}")));
    }
    let measure = |s: f64| psnr(image, &apply_speckle(image, s, CALIBRATION_SEED, range));
    let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
    let p_lo = measure(lo)?;
    let p_hi = measure(hi)?;
    if p_lo < target_db - BISECTION_TOLERANCE_DB {
        return Err(Error::Calibration(format!(
            "{target_db} dB unreachable: weakest noise already gives {p_lo:.2} dB"
        )));
    }
    if p_hi > target_db + BISECTION_TOLERANCE_DB {
        return Err(Error::Calibration(format!(
            "{target_db} dB unreachable: strongest noise still gives {p_hi:.2} dB"
        )));
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let p = measure(mid)?;
        if (p - target_db).abs() <= BISECTION_TOLERANCE_DB {
            return Ok(mid);
        }
        // PSNR falls as sigma grows
        if p > target_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration(format!(
        "no sigma within {BISECTION_TOLERANCE_DB} dB of {target_db} dB after {MAX_BISECTIONS} bisections"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> Raster {
        Raster::new(w, h, (0..w * h).map(|i| 0.1 + (i % 17) as f64 / 16.0).collect()).unwrap()
    }

    #[test]
    fn psnr_cases() {
        let a = Raster::filled(8, 8, 200.0).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        // peak 255 reference, off by one everywhere: 20 log10(255)
        let mut d = vec![100.0; 64];
        d[0] = 255.0;
        let r = Raster::new(8, 8, d.clone()).unwrap();
        let t = Raster::new(8, 8, d.iter().map(|v| v - 1.0).collect()).unwrap();
        assert!((psnr(&r, &t).unwrap() - 48.130_803_608_679_1).abs() < 1e-9);
        assert!(psnr(&r, &Raster::filled(4, 4, 0.0).unwrap()).is_err());
    }

    #[test]
    fn halving_mse_adds_three_db() {
        let r = Raster::filled(4, 4, 10.0).unwrap();
        let t1 = Raster::filled(4, 4, 12.0).unwrap();
        let t2 = Raster::filled(4, 4, 10.0 + 2.0 / 2f64.sqrt()).unwrap();
        let gain = psnr(&r, &t2).unwrap() - psnr(&r, &t1).unwrap();
        assert!((gain - 10.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn speckle_is_deterministic_and_in_range() {
        let img = gradient(32, 16);
        let a = apply_speckle(&img, 0.4, 9, PixelRange::Real);
        assert_eq!(a, apply_speckle(&img, 0.4, 9, PixelRange::Real));
        assert_ne!(a, apply_speckle(&img, 0.4, 10, PixelRange::Real));
        assert!(a.data().iter().all(|&v| v >= 0.0));
        let g = Raster::new(4, 4, vec![250.0; 16]).unwrap();
        let b = apply_speckle(&g, 3.0, 1, PixelRange::EightBit);
        assert!(b.data().iter().all(|&v| (0.0..=255.0).contains(&v) && v.fract() == 0.0));
    }

    #[test]
    fn vanishing_noise_at_high_target() {
        let img = gradient(64, 64);
        let out = corrupt_rayleigh(
            &img,
            &NoiseConfig {
                level: NoiseLevel::TargetPsnr(80.0),
                seed: 3,
            },
            PixelRange::Real,
        )
        .unwrap();
        for (a, b) in img.data().iter().zip(out.image.data()) {
            assert!((a - b).abs() <= 1e-2 * a);
        }
    }

    #[test]
    fn eight_bit_target_beyond_quantization_is_unreachable() {
        let img = Raster::new(32, 32, (0..1024).map(|i| (i % 200) as f64 + 20.0).collect()).unwrap();
        let cfg = NoiseConfig {
            level: NoiseLevel::TargetPsnr(90.0),
            seed: 1,
        };
        assert!(matches!(
            corrupt_rayleigh(&img, &cfg, PixelRange::EightBit),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn psnr_decreases_with_sigma() {
        let img = gradient(48, 48);
        let mut last = f64::INFINITY;
        for i in 1..=40 {
            let s = 0.025 * i as f64;
            let p = psnr(&img, &apply_speckle(&img, s, CALIBRATION_SEED, PixelRange::Real)).unwrap();
            assert!(p < last, "sigma {s}: {p} !< {last}");
            last = p;
        }
    }
}
