//! MAE, PSNR and SSIM on images in the unit range [0, 1].

use crate::error::{Error, Result};
use crate::masks::Mask;
use crate::tensor::Tensor;

/// Maps network output in [−1, 1] to [0, 1].
pub fn to_unit_range(t: &Tensor) -> Tensor {
    t.map(|v| (v + 1.0) * 0.5)
}

pub fn mae(output: &Tensor, target: &Tensor) -> Result<f64> {
    output.ensure_same_shape(target)?;
    let sum: f64 = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    Ok(sum / output.numel() as f64)
}

pub fn mse(output: &Tensor, target: &Tensor) -> Result<f64> {
    output.ensure_same_shape(target)?;
    let sum: f64 = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(sum / output.numel() as f64)
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// `10·log10(1 / MSE)`; `+∞` for identical images.
pub fn psnr(output: &Tensor, target: &Tensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(output, target)?))
}

/// PSNR over hole pixels only (mask value 0), all channels.
pub fn psnr_in_holes(output: &Tensor, target: &Tensor, mask: &Mask) -> Result<f64> {
    output.ensure_same_shape(target)?;
    let [n, c, h, w] = output.shape();
    if (mask.height(), mask.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: vec![h, w],
            actual: vec![mask.height(), mask.width()],
        });
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    if !mask.is_known(y, x) {
                        sum += (output.at(b, ch, y, x) as f64 - target.at(b, ch, y, x) as f64).powi(2);
                        count += 1;
                    }
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("mask has no holes".into()));
    }
    Ok(psnr_from_mse(sum / count as f64))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering of a row-major plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| plane[y * w + x + i] * k[i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| rows[(y + i) * ow + x] * k[i]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mu_a = filter_valid(a, h, w, k);
    let mu_b = filter_valid(b, h, w, k);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let e_aa = filter_valid(&prod(a, a), h, w, k);
    let e_bb = filter_valid(&prod(b, b), h, w, k);
    let e_ab = filter_valid(&prod(a, b), h, w, k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / mu_a.len() as f64
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over
/// channels and batch items. Images must be at least 11×11.
pub fn ssim(output: &Tensor, target: &Tensor) -> Result<f64> {
    output.ensure_same_shape(target)?;
    let [n, c, h, w] = output.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images")));
    }
    let k = gaussian_window();
    let plane = h * w;
    let mut total = 0.0;
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let a: Vec<f64> = output.data()[off..off + plane].iter().map(|&v| v as f64).collect();
            let t: Vec<f64> = target.data()[off..off + plane].iter().map(|&v| v as f64).collect();
            total += ssim_plane(&a, &t, h, w, &k);
        }
    }
    Ok(total / (n * c) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.random::<f32>())
    }

    #[test]
    fn identity_cases() {
        let i = random_image([1, 3, 32, 32], 1);
        assert_eq!(mae(&i, &i).unwrap(), 0.0);
        assert_eq!(psnr(&i, &i).unwrap(), f64::INFINITY);
        assert!((ssim(&i, &i).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_psnr() {
        let i = random_image([1, 3, 16, 16], 2).map(|v| v * 0.8);
        let o = i.map(|v| v + 0.1);
        let p = psnr(&o, &i).unwrap();
        assert!((p - 20.0).abs() < 1e-4, "{p}");
    }

    #[test]
    fn mae_matches_double_loop() {
        let a = random_image([1, 1, 8, 8], 3);
        let b = random_image([1, 1, 8, 8], 4);
        let mut acc = 0.0f64;
        for y in 0..8 {
            for x in 0..8 {
                acc += (a.at(0, 0, y, x) as f64 - b.at(0, 0, y, x) as f64).abs();
            }
        }
        assert!((mae(&a, &b).unwrap() - acc / 64.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_errors() {
        let a = Tensor::zeros([1, 3, 16, 16]);
        let b = Tensor::zeros([1, 3, 16, 15]);
        assert!(mae(&a, &b).is_err());
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn hole_psnr_ignores_known_pixels() {
        let i = random_image([1, 3, 16, 16], 5);
        let mut o = i.clone();
        let mask = crate::masks::rect_mask(16, 16, 4, 4, 4, 4);
        // change only known pixels
        o.set(0, 0, 0, 0, 0.0);
        assert_eq!(psnr_in_holes(&o, &i, &mask).unwrap(), f64::INFINITY);
        assert!(psnr_in_holes(&o, &i, &crate::masks::Mask::ones(16, 16)).is_err());
    }

    proptest! {
        #[test]
        fn ssim_is_symmetric_and_bounded(s1 in 0u64..500, s2 in 0u64..500) {
            let a = random_image([1, 3, 16, 16], s1);
            let b = random_image([1, 3, 16, 16], s2 + 1000);
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
