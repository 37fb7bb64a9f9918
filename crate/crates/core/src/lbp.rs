//! Local binary patterns: the exact thresholded operator and its
//! differentiable fixed-kernel surrogate.
//!
//! Neighbours are enumerated row-major over the 3×3 window,
//!
//! ```text
//! 0 1 2
//! 3 c 4
//! 5 6 7
//! ```
//!
//! and neighbour `i` carries the code `2^i`. With dilation `d` the
//! neighbours sit `d` pixels away from the centre and the output shrinks by
//! `2·d` in each dimension (no padding).

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row/column offsets (in units of the dilation) of the eight neighbours.
pub const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Code weight of each neighbour, `2^i`.
pub const CODES: [u32; 8] = [1, 2, 4, 8, 16, 32, 64, 128];

/// Luma weights applied to (r, g, b). They sum to 0.996 and are used as is.
pub const GRAY_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.110];

/// How the exact operator treats a neighbour equal to the centre.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// bit = 1 iff neighbour > centre.
    #[default]
    Strict,
    /// bit = 1 iff neighbour >= centre.
    Inclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbpConfig {
    pub dilation: usize,
    #[serde(default)]
    pub tie_rule: TieRule,
}

impl Default for LbpConfig {
    fn default() -> Self {
        Self {
            dilation: 1,
            tie_rule: TieRule::Strict,
        }
    }
}

impl LbpConfig {
    pub fn with_dilation(dilation: usize) -> Self {
        Self {
            dilation,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilation == 0 {
            return Err(Error::Config("LBP dilation must be positive".into()));
        }
        Ok(())
    }

    /// Smallest image side the dilated 3×3 neighbourhood fits in.
    pub fn min_side(&self) -> usize {
        2 * self.dilation + 1
    }
}

/// Real-valued single-channel image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage<T> {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<T>,
}

/// Output of the LBP operators; shares the row-major layout of [`GrayImage`].
pub type LbpImage<T> = GrayImage<T>;

impl<T: Float> GrayImage<T> {
    pub fn new(height: usize, width: usize, pixels: Vec<T>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::invalid(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            pixels,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.pixels[y * self.width + x]
    }
}

/// Weighted sum of the r, g, b planes of a channel-major image.
pub fn to_gray<T: Float>(channels: usize, height: usize, width: usize, data: &[T]) -> Result<GrayImage<T>> {
    if channels != 3 {
        return Err(Error::invalid(format!(
            "grayscale conversion needs 3 channels, got {channels}"
        )));
    }
    let plane = height * width;
    if data.len() != 3 * plane {
        return Err(Error::invalid("pixel buffer does not match 3xHxW"));
    }
    let [wr, wg, wb] = GRAY_WEIGHTS.map(|v| T::from(v).expect("weights are representable"));
    let pixels = (0..plane)
        .map(|i| wr * data[i] + wg * data[plane + i] + wb * data[2 * plane + i])
        .collect();
    Ok(GrayImage {
        height,
        width,
        pixels,
    })
}

fn check_input<T: Float>(img: &GrayImage<T>, cfg: &LbpConfig) -> Result<()> {
    cfg.validate()?;
    let min = cfg.min_side();
    if img.height < min || img.width < min {
        return Err(Error::invalid(format!(
            "{}x{} image is smaller than the {min}x{min} LBP window at dilation {}",
            img.height, img.width, cfg.dilation
        )));
    }
    if img.pixels.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("LBP input contains non-finite values"));
    }
    Ok(())
}

#[inline]
fn neighbor_index(width: usize, y: usize, x: usize, d: usize, k: usize) -> usize {
    let (dy, dx) = NEIGHBOR_OFFSETS[k];
    let ny = (y + d) as isize + dy * d as isize;
    let nx = (x + d) as isize + dx * d as isize;
    ny as usize * width + nx as usize
}

/// The thresholded LBP code of every interior pixel.
pub fn lbp_exact<T: Float>(img: &GrayImage<T>, cfg: &LbpConfig) -> Result<LbpImage<T>> {
    check_input(img, cfg)?;
    let d = cfg.dilation;
    let (oh, ow) = (img.height - 2 * d, img.width - 2 * d);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let c = img.pixels[(y + d) * img.width + x + d];
            let mut code = 0u32;
            for (k, &weight) in CODES.iter().enumerate() {
                let n = img.pixels[neighbor_index(img.width, y, x, d, k)];
                let bit = match cfg.tie_rule {
                    TieRule::Strict => n > c,
                    TieRule::Inclusive => n >= c,
                };
                if bit {
                    code |= weight;
                }
            }
            out.push(T::from(code).expect("codes fit any float"));
        }
    }
    Ok(GrayImage {
        height: oh,
        width: ow,
        pixels: out,
    })
}

/// The eight fixed 3×3 difference kernels: centre −1, one neighbour +1.
pub fn surrogate_kernels() -> [[[i8; 3]; 3]; 8] {
    let mut kernels = [[[0i8; 3]; 3]; 8];
    for (k, kernel) in kernels.iter_mut().enumerate() {
        kernel[1][1] = -1;
        let (dy, dx) = NEIGHBOR_OFFSETS[k];
        kernel[(1 + dy) as usize][(1 + dx) as usize] = 1;
    }
    kernels
}

/// Differentiable LBP: `Σ_i 2^i · max(0, neighbour_i − centre) / 255`.
///
/// Equivalent to a bias-free dilated convolution with the kernels of
/// [`surrogate_kernels`], a rectifier, code weighting and a channel sum. It
/// carries no learnable state.
pub fn lbp_surrogate<T: Float>(img: &GrayImage<T>, cfg: &LbpConfig) -> Result<LbpImage<T>> {
    check_input(img, cfg)?;
    let d = cfg.dilation;
    let (oh, ow) = (img.height - 2 * d, img.width - 2 * d);
    let norm = T::from(255.0).unwrap();
    let codes = CODES.map(|c| T::from(c).unwrap());
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let c = img.pixels[(y + d) * img.width + x + d];
            let mut acc = T::zero();
            for (k, &code) in codes.iter().enumerate() {
                let diff = img.pixels[neighbor_index(img.width, y, x, d, k)] - c;
                if diff > T::zero() {
                    acc = acc + code * diff;
                }
            }
            out.push(acc / norm);
        }
    }
    Ok(GrayImage {
        height: oh,
        width: ow,
        pixels: out,
    })
}

/// Vector-Jacobian product of [`lbp_surrogate`]: maps a gradient on the LBP
/// grid back onto the grayscale image. The rectifier's derivative at zero is
/// taken as zero.
pub fn lbp_surrogate_backward<T: Float>(
    img: &GrayImage<T>,
    cfg: &LbpConfig,
    upstream: &LbpImage<T>,
) -> Result<GrayImage<T>> {
    check_input(img, cfg)?;
    let d = cfg.dilation;
    let (oh, ow) = (img.height - 2 * d, img.width - 2 * d);
    if upstream.height != oh || upstream.width != ow {
        return Err(Error::ShapeMismatch {
            expected: vec![oh, ow],
            actual: vec![upstream.height, upstream.width],
        });
    }
    let norm = T::from(255.0).unwrap();
    let codes = CODES.map(|c| T::from(c).unwrap() / norm);
    let mut grad = vec![T::zero(); img.pixels.len()];
    for y in 0..oh {
        for x in 0..ow {
            let g = upstream.pixels[y * ow + x];
            if g == T::zero() {
                continue;
            }
            let ci = (y + d) * img.width + x + d;
            let c = img.pixels[ci];
            for (k, &code) in codes.iter().enumerate() {
                let ni = neighbor_index(img.width, y, x, d, k);
                if img.pixels[ni] - c > T::zero() {
                    let v = g * code;
                    grad[ni] = grad[ni] + v;
                    grad[ci] = grad[ci] - v;
                }
            }
        }
    }
    Ok(GrayImage {
        height: img.height,
        width: img.width,
        pixels: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn patch(rows: [[f64; 3]; 3]) -> GrayImage<f64> {
        GrayImage::from_fn(3, 3, |y, x| rows[y][x])
    }

    #[test]
    fn gray_conversion_uses_weights_verbatim() {
        let px = |r: f64, g: f64, b: f64| to_gray(3, 1, 1, &[r, g, b]).unwrap().pixels[0];
        assert_eq!(px(0.0, 0.0, 0.0), 0.0);
        assert!((px(255.0, 255.0, 255.0) - 253.98).abs() < 1e-9);
        assert!((px(255.0, 0.0, 0.0) - 76.245).abs() < 1e-9);
    }

    #[test]
    fn gray_conversion_rejects_wrong_channel_count() {
        assert!(to_gray(1, 2, 2, &[0.0f64; 4]).is_err());
        assert!(to_gray(4, 1, 1, &[0.0f64; 4]).is_err());
    }

    #[test]
    fn exact_code_of_reference_patch() {
        let img = patch([[5.0, 9.0, 1.0], [4.0, 4.0, 6.0], [7.0, 2.0, 3.0]]);
        let out = lbp_exact(&img, &LbpConfig::default()).unwrap();
        assert_eq!(out.pixels, vec![51.0]);
    }

    #[test]
    fn exact_code_of_binary_patch() {
        let img = patch([[1.0, 0.0, 1.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
        let out = lbp_exact(&img, &LbpConfig::default()).unwrap();
        assert_eq!(out.pixels, vec![85.0]);
    }

    #[test]
    fn inclusive_ties_set_every_bit_on_constant_input() {
        let img = GrayImage::from_fn(4, 4, |_, _| 7.0f64);
        let cfg = LbpConfig {
            dilation: 1,
            tie_rule: TieRule::Inclusive,
        };
        let out = lbp_exact(&img, &cfg).unwrap();
        assert!(out.pixels.iter().all(|&v| v == 255.0));
    }

    #[test]
    fn constant_image_gives_zero_codes() {
        let img = GrayImage::from_fn(6, 5, |_, _| 7.0f64);
        let cfg = LbpConfig::default();
        assert!(lbp_exact(&img, &cfg).unwrap().pixels.iter().all(|&v| v == 0.0));
        assert!(lbp_surrogate(&img, &cfg).unwrap().pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn surrogate_weighs_difference_magnitudes() {
        let img = patch([[9.0, 9.0, 9.0], [9.0, 5.0, 9.0], [9.0, 9.0, 9.0]]);
        let out = lbp_surrogate(&img, &LbpConfig::default()).unwrap();
        assert!((out.pixels[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn kernels_have_single_plus_one_and_centre_minus_one() {
        for (k, kernel) in surrogate_kernels().iter().enumerate() {
            let flat: Vec<i8> = kernel.iter().flatten().copied().collect();
            assert_eq!(flat[4], -1);
            assert_eq!(flat.iter().filter(|&&v| v == 1).count(), 1);
            assert_eq!(flat.iter().map(|&v| v as i32).sum::<i32>(), 0);
            let pos = if k < 4 { k } else { k + 1 };
            assert_eq!(flat[pos], 1);
        }
    }

    #[test]
    fn output_shrinks_by_twice_the_dilation() {
        let img = GrayImage::from_fn(20, 17, |y, x| (y * 3 + x) as f64);
        for d in [1, 4] {
            let out = lbp_exact(&img, &LbpConfig::with_dilation(d)).unwrap();
            assert_eq!((out.height, out.width), (20 - 2 * d, 17 - 2 * d));
        }
    }

    #[test]
    fn too_small_images_are_rejected() {
        let img = GrayImage::from_fn(8, 8, |_, _| 0.0f64);
        assert!(lbp_exact(&img, &LbpConfig::with_dilation(4)).is_err());
        assert!(lbp_surrogate(&img, &LbpConfig::with_dilation(4)).is_err());
        assert!(lbp_exact(&img, &LbpConfig::with_dilation(3)).is_ok());
        let tiny = GrayImage::from_fn(2, 5, |_, _| 0.0f64);
        assert!(lbp_exact(&tiny, &LbpConfig::default()).is_err());
    }

    #[test]
    fn dilated_neighbors_are_sampled_at_radius() {
        // only the pixel 4 to the right of the centre is brighter → code 16
        let mut img = GrayImage::from_fn(9, 9, |_, _| 1.0f64);
        img.pixels[4 * 9 + 8] = 2.0;
        let out = lbp_exact(&img, &LbpConfig::with_dilation(4)).unwrap();
        assert_eq!(out.pixels, vec![16.0]);
    }

    proptest! {
        #[test]
        fn exact_codes_are_bytes(pixels in prop::collection::vec(-1e3f64..1e3, 49)) {
            let img = GrayImage::new(7, 7, pixels).unwrap();
            let out = lbp_exact(&img, &LbpConfig::default()).unwrap();
            for v in out.pixels {
                prop_assert!(v.fract() == 0.0 && (0.0..=255.0).contains(&v));
            }
        }

        #[test]
        fn translation_moves_both_outputs(pixels in prop::collection::vec(0f64..255.0, 12 * 12), dy in 0usize..3, dx in 0usize..3) {
            let img = GrayImage::new(12, 12, pixels).unwrap();
            let shifted = GrayImage::from_fn(9, 9, |y, x| img.get(y + dy, x + dx));
            let cfg = LbpConfig::default();
            for (full, part) in [
                (lbp_exact(&img, &cfg).unwrap(), lbp_exact(&shifted, &cfg).unwrap()),
                (lbp_surrogate(&img, &cfg).unwrap(), lbp_surrogate(&shifted, &cfg).unwrap()),
            ] {
                for y in 0..part.height {
                    for x in 0..part.width {
                        prop_assert_eq!(part.get(y, x), full.get(y + dy, x + dx));
                    }
                }
            }
        }
    }
}
