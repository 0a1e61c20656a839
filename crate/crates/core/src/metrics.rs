//! Image and volume quality metrics.

use alloc::vec::Vec;

use crate::image::Image;
use crate::volume::ScalarVolume;
use crate::{math, Error, Result};

/// PSNR reported for identical inputs.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// PSNR with peak value 1 over two equally sized buffers.
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            context: "psnr operands",
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(PSNR_CAP_DB);
    }
    let mse = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * math::log10(1.0 / mse)).min(PSNR_CAP_DB))
}

pub fn psnr_images(a: &Image, b: &Image) -> Result<f64> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::ShapeMismatch {
            context: "image size",
            expected: a.width() * a.height(),
            found: b.width() * b.height(),
        });
    }
    psnr(a.data(), b.data())
}

pub fn psnr_volumes(a: &ScalarVolume, b: &ScalarVolume) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch {
            context: "volume dimensions",
            expected: a.len(),
            found: b.len(),
        });
    }
    psnr(a.data(), b.data())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = num_traits::Float::exp(-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering: output is `(w - 10) × (h - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows: Vec<f64> = Vec::with_capacity(ow * h);
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows.push(
                k.iter()
                    .zip(&line[x..x + SSIM_WINDOW])
                    .map(|(a, b)| a * b)
                    .sum(),
            );
        }
    }
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * rows[(y + j) * ow + x];
            }
            out.push(acc);
        }
    }
    out
}

/// Mean structural similarity of the luminance channels, 11×11 Gaussian
/// window with σ = 1.5 and dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::ShapeMismatch {
            context: "image size",
            expected: a.width() * a.height(),
            found: b.width() * b.height(),
        });
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let x: Vec<f64> = a.luminance().into_iter().map(f64::from).collect();
    let y: Vec<f64> = b.luminance().into_iter().map(f64::from).collect();
    let k = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

    let mu_x = filter_valid(&x, w, h, &k);
    let mu_y = filter_valid(&y, w, h, &k);
    let s_xx = filter_valid(&xx, w, h, &k);
    let s_yy = filter_valid(&yy, w, h, &k);
    let s_xy = filter_valid(&xy, w, h, &k);

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = s_xx[i] - mx * mx;
        let vy = s_yy[i] - my * my;
        let cov = s_xy[i] - mx * my;
        total +=
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / mu_x.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(w, h, (0..w * h * 4).map(|_| rng.random()).collect()).unwrap()
    }

    fn constant_image(w: usize, h: usize, v: f32) -> Image {
        Image::from_data(w, h, alloc::vec![v; w * h * 4]).unwrap()
    }

    #[test]
    fn psnr_identical_is_capped() {
        let a = random_image(8, 8, 1);
        assert_eq!(psnr_images(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_unit_difference_is_zero_db() {
        let a = constant_image(4, 4, 0.0);
        let b = constant_image(4, 4, 1.0);
        assert_eq!(psnr_images(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn psnr_matches_scalar_loop() {
        let a = random_image(13, 9, 2);
        let b = random_image(13, 9, 3);
        let mut sum = 0.0f64;
        for i in 0..a.data().len() {
            let d = a.data()[i] as f64 - b.data()[i] as f64;
            sum += d * d;
        }
        let expected = 10.0 * (1.0 / (sum / a.data().len() as f64)).log10();
        assert!((psnr_images(&a, &b).unwrap() - expected).abs() < 1e-6);
        assert_eq!(psnr_images(&a, &b).unwrap(), psnr_images(&b, &a).unwrap());
    }

    #[test]
    fn psnr_shape_mismatch() {
        assert!(psnr(&[0.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = random_image(24, 20, 4);
        let b = random_image(24, 20, 5);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_detects_negative() {
        let a = constant_image(16, 16, 0.9);
        let b = constant_image(16, 16, 0.1);
        assert!(ssim(&a, &b).unwrap() < 1.0);
    }

    #[test]
    fn ssim_stable_under_tiny_noise() {
        let a = constant_image(32, 32, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noisy: Vec<f32> = a
            .data()
            .iter()
            .map(|v| v + rng.random_range(-1e-3..1e-3))
            .collect();
        let b = Image::from_data(32, 32, noisy).unwrap();
        assert!(ssim(&a, &b).unwrap() > 0.95);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = constant_image(10, 40, 0.5);
        assert!(matches!(ssim(&a, &a), Err(Error::ImageTooSmall { .. })));
    }
}
