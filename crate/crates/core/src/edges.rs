//! Canny edge maps and edge-recovery scores over hole regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::Mask;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CannyConfig {
    pub sigma: f64,
    /// Hysteresis thresholds on the gradient magnitude of a [0, 1] image.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            low: 0.1,
            high: 0.2,
        }
    }
}

/// Binary edge map, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMap {
    pub height: usize,
    pub width: usize,
    pub edges: Vec<bool>,
}

impl EdgeMap {
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.edges[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    // mirror without repeating the edge sample: -1 → 1, n → n-2
    let n = n as isize;
    let mut i = i;
    if n == 1 {
        return 0;
    }
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

fn blur(img: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return img.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * img[y * w + reflect(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[reflect(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Canny detector on a grayscale image in [0, 1]: Gaussian smoothing,
/// Sobel gradients scaled by 1/8 (so a unit ramp has magnitude 1), non-maximum
/// suppression over four directions, and 8-connected hysteresis. The
/// one-pixel image border never carries edges.
pub fn canny(gray: &[f64], height: usize, width: usize, cfg: &CannyConfig) -> Result<EdgeMap> {
    if gray.len() != height * width {
        return Err(Error::invalid("gray buffer does not match dimensions"));
    }
    if height < 3 || width < 3 {
        return Err(Error::invalid("Canny needs at least 3x3 pixels"));
    }
    if !(cfg.low >= 0.0 && cfg.low <= cfg.high) {
        return Err(Error::Config(format!("invalid Canny thresholds {}/{}", cfg.low, cfg.high)));
    }
    let (h, w) = (height, width);
    let s = blur(gray, h, w, cfg.sigma);
    let at = |y: usize, x: usize| s[y * w + x];
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    let mut mag = vec![0.0; h * w];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let dx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let dy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let i = y * w + x;
            gx[i] = dx / 8.0;
            gy[i] = dy / 8.0;
            mag[i] = gx[i].hypot(gy[i]);
        }
    }
    // 0 = strong, 1 = weak, 2 = none
    let mut class = vec![2u8; h * w];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m < cfg.low || m == 0.0 {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (dy, dx): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let fwd = mag[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            let back = mag[(y as isize - dy) as usize * w + (x as isize - dx) as usize];
            // strict on one side so plateaus of two equal maxima yield one pixel
            if m > fwd && m >= back {
                class[i] = if m >= cfg.high { 0 } else { 1 };
            }
        }
    }
    let mut edges = vec![false; h * w];
    let mut stack: Vec<usize> = (0..h * w).filter(|&i| class[i] == 0).collect();
    for &i in &stack {
        edges[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if class[j] == 1 && !edges[j] {
                    edges[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    Ok(EdgeMap {
        height: h,
        width: w,
        edges,
    })
}

/// Luma (0.299, 0.587, 0.114) of a `[1, 3, H, W]` or `[1, 1, H, W]` image.
pub fn luma(image: &Tensor) -> Result<Vec<f64>> {
    let [n, c, h, w] = image.shape();
    if n != 1 {
        return Err(Error::invalid("edge detection takes a single image"));
    }
    let plane = h * w;
    let d = image.data();
    match c {
        1 => Ok(d.iter().map(|&v| v as f64).collect()),
        3 => Ok((0..plane)
            .map(|i| 0.299 * d[i] as f64 + 0.587 * d[plane + i] as f64 + 0.114 * d[2 * plane + i] as f64)
            .collect()),
        _ => Err(Error::invalid(format!("edge detection needs 1 or 3 channels, got {c}"))),
    }
}

/// Confusion counts and derived scores over hole pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

impl EdgeReport {
    /// Scores from raw counts. With neither labelled nor predicted edges the
    /// maps agree perfectly and precision/recall/F1 are 1; otherwise a zero
    /// denominator yields 0.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let total = (tp + fp + tn + fn_) as f64;
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let (precision, recall) = if tp + fp + fn_ == 0 {
            (1.0, 1.0)
        } else {
            (ratio(tp, tp + fp), ratio(tp, tp + fn_))
        };
        let f1 = if precision > 0.0 && recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            accuracy: (tp + tn) as f64 / total,
            precision,
            recall,
            f1,
            true_pos: tp,
            false_pos: fp,
            true_neg: tn,
            false_neg: fn_,
        }
    }
}

/// Compares the edges of `output` against those of `target` at the hole
/// pixels of `mask`. Images are `[1, C, H, W]` in [0, 1].
pub fn edge_metrics(output: &Tensor, target: &Tensor, mask: &Mask, cfg: &CannyConfig) -> Result<EdgeReport> {
    output.ensure_same_shape(target)?;
    let [_, _, h, w] = output.shape();
    if (mask.height(), mask.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: vec![h, w],
            actual: vec![mask.height(), mask.width()],
        });
    }
    if mask.hole_count() == 0 {
        return Err(Error::UndefinedMetric("edge metrics need at least one hole pixel".into()));
    }
    let gt = canny(&luma(target)?, h, w, cfg)?;
    let pred = canny(&luma(output)?, h, w, cfg)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if mask.is_known(y, x) {
                continue;
            }
            match (gt.get(y, x), pred.get(y, x)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
                (true, false) => fn_ += 1,
            }
        }
    }
    Ok(EdgeReport::from_counts(tp, fp, tn, fn_))
}
