//! Dense `f32` tensors in NCHW layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense 4-D tensor laid out as (batch, channels, height, width).
///
/// Scalars are stored as `[1, 1, 1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "tensor of shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 4], value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(b, ch, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// Size of one batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// Copies batch item `n` into a tensor with batch size one.
    pub fn select(&self, n: usize) -> Tensor {
        Tensor {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.item(n).to_vec(),
        }
    }

    /// Stacks tensors along the batch axis. All items must share C, H, W.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot stack an empty list"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(Tensor::numel).sum());
        let mut n = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::ShapeMismatch {
                    expected: first.shape.to_vec(),
                    actual: t.shape.to_vec(),
                });
            }
            data.extend_from_slice(&t.data);
            n += t.shape[0];
        }
        Ok(Tensor {
            shape: [n, c, h, w],
            data,
        })
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cannot concatenate an empty list"))?;
        let [n, _, h, w] = first.shape;
        for p in parts {
            if p.shape[0] != n || p.shape[2] != h || p.shape[3] != w {
                return Err(Error::ShapeMismatch {
                    expected: vec![n, p.shape[1], h, w],
                    actual: p.shape.to_vec(),
                });
            }
        }
        let c: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for p in parts {
                data.extend_from_slice(p.item(b));
            }
        }
        Ok(Tensor {
            shape: [n, c, h, w],
            data,
        })
    }

    pub fn ensure_shape(&self, expected: [usize; 4]) -> Result<()> {
        if self.shape == expected {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: expected.to_vec(),
                actual: self.shape.to_vec(),
            })
        }
    }

    pub fn ensure_same_shape(&self, other: &Tensor) -> Result<()> {
        other.ensure_shape(self.shape)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        self.ensure_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Elementwise product with a single-channel tensor broadcast across channels.
    pub fn mul_broadcast_channels(&self, mask: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        mask.ensure_shape([n, 1, h, w])?;
        let plane = h * w;
        let mut out = self.clone();
        for b in 0..n {
            let m = mask.item(b);
            for ch in 0..c {
                let dst = &mut out.data[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                for (d, &mv) in dst.iter_mut().zip(m) {
                    *d *= mv;
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn mean(&self) -> f32 {
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Area (box) downsampling by an integer factor.
    pub fn downsample_area(&self, factor: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::invalid(format!(
                "cannot area-downsample {h}x{w} by {factor}"
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (oh, ow) = (h / factor, w / factor);
        let norm = 1.0 / (factor * factor) as f32;
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = 0.0f32;
                        for dy in 0..factor {
                            let row = self.offset(b, ch, y * factor + dy, x * factor);
                            acc += self.data[row..row + factor].iter().sum::<f32>();
                        }
                        out.set(b, ch, y, x, acc * norm);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Nearest-neighbour resampling to `(oh, ow)`, picking source index
    /// `floor(i * in / out)` along each axis.
    pub fn resize_nearest(&self, oh: usize, ow: usize) -> Tensor {
        let [n, c, h, w] = self.shape;
        Tensor::from_fn([n, c, oh, ow], |b, ch, y, x| {
            self.at(b, ch, y * h / oh, x * w / ow)
        })
    }

    /// Bilinear resampling with half-pixel centres (`align_corners = false`).
    pub fn resize_bilinear(&self, oh: usize, ow: usize) -> Tensor {
        let [n, c, h, w] = self.shape;
        let sy = h as f32 / oh as f32;
        let sx = w as f32 / ow as f32;
        let coords = |o: usize, scale: f32, len: usize| {
            let src = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f32)
        };
        Tensor::from_fn([n, c, oh, ow], |b, ch, y, x| {
            let (y0, y1, fy) = coords(y, sy, h);
            let (x0, x1, fx) = coords(x, sx, w);
            let top = self.at(b, ch, y0, x0) * (1.0 - fx) + self.at(b, ch, y0, x1) * fx;
            let bot = self.at(b, ch, y1, x0) * (1.0 - fx) + self.at(b, ch, y1, x1) * fx;
            top * (1.0 - fy) + bot * fy
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_downsample_averages_blocks() {
        let t = Tensor::new([1, 1, 2, 4], vec![1.0, 3.0, 0.0, 0.0, 5.0, 7.0, 4.0, 8.0]).unwrap();
        let d = t.downsample_area(2).unwrap();
        assert_eq!(d.shape(), [1, 1, 1, 2]);
        assert_eq!(d.data(), &[4.0, 3.0]);
    }

    #[test]
    fn nearest_keeps_binary_values() {
        let t = Tensor::from_fn([1, 1, 256, 256], |_, _, y, x| ((x / 3 + y / 5) % 2) as f32);
        for size in [32, 64, 128] {
            let d = t.resize_nearest(size, size);
            assert!(d.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn bilinear_doubling_of_constant_is_constant() {
        let t = Tensor::full([1, 3, 32, 32], 0.25);
        let u = t.resize_bilinear(64, 64);
        assert!(u.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn bilinear_upsample_matches_half_pixel_rule() {
        // 1-D ramp [0, 1]: half-pixel centres give 0, .25, .75, 1
        let t = Tensor::new([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let u = t.resize_bilinear(1, 4);
        assert_eq!(u.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn concat_interleaves_per_batch_item() {
        let a = Tensor::from_fn([2, 1, 1, 1], |b, _, _, _| b as f32);
        let b = Tensor::from_fn([2, 2, 1, 1], |b, c, _, _| 10.0 + (b * 2 + c) as f32);
        let cat = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), [2, 3, 1, 1]);
        assert_eq!(cat.data(), &[0.0, 10.0, 11.0, 1.0, 12.0, 13.0]);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::zeros([1, 2, 4, 4]);
        let b = Tensor::zeros([1, 2, 8, 8]);
        assert!(Tensor::concat_channels(&[&a, &b]).is_err());
    }
}
