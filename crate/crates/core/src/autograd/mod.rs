//! A small define-by-run reverse-mode autograd tape.
//!
//! Only the operations the inpainting networks and their losses need are
//! provided: fused convolution/activation, transposed convolution, channel
//! concatenation, spectral normalisation of a weight, and a handful of
//! scalar reductions. Everything runs single-threaded, so results are
//! bit-reproducible for identical inputs.

pub(crate) mod conv;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use conv::ConvDims;

/// Pointwise nonlinearity fused into a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    LeakyRelu(f32),
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, v: f32) -> f32 {
        match self {
            Activation::None => v,
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu(slope) => {
                if v > 0.0 {
                    v
                } else {
                    v * slope
                }
            }
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn grad_from_output(self, y: f32) -> f32 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if y > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Conv,
    Transposed,
}

enum Op {
    Leaf,
    Conv {
        kind: ConvKind,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        act: Activation,
    },
    Concat(Vec<Var>),
    SpectralNorm {
        w: Var,
        u: Vec<f32>,
        v: Vec<f32>,
        sigma: f32,
    },
    L1Mean(Var, Var),
    SquaredErrorMean {
        x: Var,
        target: f32,
    },
    /// Scalar function of `x` whose gradient was computed during the forward pass.
    ScalarWithGrad {
        x: Var,
        grad: Tensor,
    },
    WeightedSum(Vec<(Var, f32)>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Result of a power iteration on a weight matrix.
pub struct SpectralEstimate {
    pub u: Vec<f32>,
    pub sigma: f32,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A tensor that takes part in differentiation only if `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A constant input.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros([0, 0, 0, 0]))
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Convolution (or transposed convolution) with a fused activation.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        kind: ConvKind,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        act: Activation,
    ) -> Result<Var> {
        let dims = self.conv_dims(kind, x, w, stride, pad)?;
        if let Some(b) = b {
            let bs = self.value(b).numel();
            if bs != dims.out_ch {
                return Err(Error::Construction(format!(
                    "bias has {bs} entries for {} output channels",
                    dims.out_ch
                )));
            }
        }
        let mut out = Tensor::zeros([dims.batch, dims.out_ch, dims.out_h, dims.out_w]);
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = b.map(|b| self.value(b).data());
            match kind {
                ConvKind::Conv => conv::conv2d_forward(&dims, xv, wv, bv, out.data_mut()),
                ConvKind::Transposed => conv::conv_transpose2d_forward(&dims, xv, wv, bv, out.data_mut()),
            }
        }
        if act != Activation::None {
            out.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        let needs = self.needs_grad(x) || self.needs_grad(w) || b.is_some_and(|b| self.needs_grad(b));
        Ok(self.push(
            out,
            Op::Conv {
                kind,
                x,
                w,
                b,
                stride,
                pad,
                act,
            },
            needs,
        ))
    }

    fn conv_dims(&self, kind: ConvKind, x: Var, w: Var, stride: usize, pad: usize) -> Result<ConvDims> {
        let [batch, in_ch, in_h, in_w] = self.value(x).shape();
        let [w0, w1, kh, kw] = self.value(w).shape();
        if kh != kw {
            return Err(Error::Construction("only square kernels are supported".into()));
        }
        let (w_in, out_ch) = match kind {
            ConvKind::Conv => (w1, w0),
            ConvKind::Transposed => (w0, w1),
        };
        if w_in != in_ch {
            return Err(Error::Construction(format!(
                "layer expects {w_in} input channels, got {in_ch}"
            )));
        }
        let size = |s: usize| match kind {
            ConvKind::Conv => conv::conv_out_size(s, kh, stride, pad),
            ConvKind::Transposed => conv::conv_transpose_out_size(s, kh, stride, pad),
        };
        let (out_h, out_w) = match (size(in_h), size(in_w)) {
            (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
            _ => {
                return Err(Error::Construction(format!(
                    "input {in_h}x{in_w} too small for kernel {kh}"
                )))
            }
        };
        Ok(ConvDims {
            batch,
            in_ch,
            out_ch,
            in_h,
            in_w,
            out_h,
            out_w,
            kernel: kh,
            stride,
            pad,
        })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let value = {
            let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
            Tensor::concat_channels(&refs)?
        };
        let needs = parts.iter().any(|&p| self.needs_grad(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), needs))
    }

    /// Divides a weight by its largest singular value estimated with
    /// `iterations` power-iteration steps starting from `u`. Returns the
    /// normalised weight and the updated left singular vector.
    pub fn spectral_norm(&mut self, w: Var, u: &[f32], iterations: usize) -> Result<(Var, Vec<f32>)> {
        let wt = self.value(w);
        let rows = wt.shape()[0];
        let cols = wt.numel() / rows;
        if u.len() != rows {
            return Err(Error::State(format!(
                "spectral-norm vector has {} entries, weight has {rows} rows",
                u.len()
            )));
        }
        let (u, v, sigma) = power_iteration(wt.data(), rows, cols, u, iterations.max(1));
        let inv = 1.0 / sigma;
        let normalized = wt.map(|x| x * inv);
        let needs = self.needs_grad(w);
        let out = self.push(
            normalized,
            Op::SpectralNorm {
                w,
                u: u.clone(),
                v,
                sigma,
            },
            needs,
        );
        Ok((out, u))
    }

    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).ensure_same_shape(self.value(b))?;
        let mean = mean_abs_diff(self.value(a).data(), self.value(b).data());
        let needs = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(Tensor::scalar(mean), Op::L1Mean(a, b), needs))
    }

    /// `mean((x - target)^2)`.
    pub fn squared_error_mean(&mut self, x: Var, target: f32) -> Var {
        let data = self.value(x).data();
        let sum: f64 = data.iter().map(|&v| ((v - target) as f64).powi(2)).sum();
        let mean = (sum / data.len() as f64) as f32;
        let needs = self.needs_grad(x);
        self.push(Tensor::scalar(mean), Op::SquaredErrorMean { x, target }, needs)
    }

    /// Wraps an externally computed scalar `value = f(x)` with its gradient.
    pub fn scalar_with_grad(&mut self, x: Var, value: f32, grad: Tensor) -> Result<Var> {
        self.value(x).ensure_same_shape(&grad)?;
        let needs = self.needs_grad(x);
        Ok(self.push(Tensor::scalar(value), Op::ScalarWithGrad { x, grad }, needs))
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f32)]) -> Result<Var> {
        let mut total = 0.0f32;
        for &(v, c) in terms {
            let t = self.value(v);
            if t.numel() != 1 {
                return Err(Error::invalid("weighted_sum only combines scalars"));
            }
            total += c * t.data()[0];
        }
        let needs = terms.iter().any(|&(v, _)| self.needs_grad(v));
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), needs))
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                kind,
                x,
                w,
                b,
                stride,
                pad,
                act,
            } => {
                let dims = self
                    .conv_dims(*kind, *x, *w, *stride, *pad)
                    .expect("shapes were validated in the forward pass");
                let mut gpre = g.clone();
                if *act != Activation::None {
                    for (gv, &y) in gpre.data_mut().iter_mut().zip(node.value.data()) {
                        *gv *= act.grad_from_output(y);
                    }
                }
                let xs = self.value(*x);
                let ws = self.value(*w);
                let mut gx = self.needs_grad(*x).then(|| Tensor::zeros(xs.shape()));
                let mut gw = self.needs_grad(*w).then(|| Tensor::zeros(ws.shape()));
                let mut gb = b
                    .filter(|b| self.needs_grad(*b))
                    .map(|b| Tensor::zeros(self.value(b).shape()));
                let backward = match kind {
                    ConvKind::Conv => conv::conv2d_backward,
                    ConvKind::Transposed => conv::conv_transpose2d_backward,
                };
                backward(
                    &dims,
                    xs.data(),
                    ws.data(),
                    gpre.data(),
                    gx.as_mut().map(|t| t.data_mut()),
                    gw.as_mut().map(|t| t.data_mut()),
                    gb.as_mut().map(|t| t.data_mut()),
                );
                accumulate(grads, *x, gx);
                accumulate(grads, *w, gw);
                if let Some(b) = b {
                    accumulate(grads, *b, gb);
                }
            }
            Op::Concat(parts) => {
                let [n, _, h, w] = g.shape();
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).channels();
                    if self.needs_grad(p) {
                        let mut gp = Tensor::zeros([n, c, h, w]);
                        for b in 0..n {
                            let src = &g.item(b)[offset * plane..(offset + c) * plane];
                            gp.item_mut(b).copy_from_slice(src);
                        }
                        accumulate(grads, p, Some(gp));
                    }
                    offset += c;
                }
            }
            Op::SpectralNorm { w, u, v, sigma } => {
                // d/dW (W / sigma) with u, v held constant:
                // (G - <G, W_sn> u v^T) / sigma
                let inner: f64 = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                let inner = inner as f32;
                let cols = v.len();
                let mut gw = g.clone();
                for (r, &ur) in u.iter().enumerate() {
                    for (c, &vc) in v.iter().enumerate() {
                        let e = &mut gw.data_mut()[r * cols + c];
                        *e = (*e - inner * ur * vc) / sigma;
                    }
                }
                accumulate(grads, *w, Some(gw));
            }
            Op::L1Mean(a, b) => {
                let scale = g.data()[0] / self.value(*a).numel() as f32;
                let av = self.value(*a);
                let bv = self.value(*b);
                let signs = av.zip_map(bv, |x, y| sign(x - y) * scale).expect("validated");
                if self.needs_grad(*b) {
                    accumulate(grads, *b, Some(signs.map(|s| -s)));
                }
                if self.needs_grad(*a) {
                    accumulate(grads, *a, Some(signs));
                }
            }
            Op::SquaredErrorMean { x, target } => {
                let xv = self.value(*x);
                let scale = 2.0 * g.data()[0] / xv.numel() as f32;
                accumulate(grads, *x, Some(xv.map(|v| (v - target) * scale)));
            }
            Op::ScalarWithGrad { x, grad } => {
                let s = g.data()[0];
                accumulate(grads, *x, Some(grad.map(|v| v * s)));
            }
            Op::WeightedSum(terms) => {
                for &(v, c) in terms {
                    if self.needs_grad(v) {
                        accumulate(grads, v, Some(Tensor::scalar(c * g.data()[0])));
                    }
                }
            }
        }
    }
}

#[inline]
fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Option<Tensor>) {
    let Some(g) = g else { return };
    match &mut grads[v.0] {
        Some(existing) => existing
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn mean_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum();
    (sum / a.len() as f64) as f32
}

fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= norm);
}

/// Power iteration on a row-major `rows × cols` matrix. Returns `(u, v, sigma)`.
pub(crate) fn power_iteration(
    w: &[f32],
    rows: usize,
    cols: usize,
    u0: &[f32],
    iterations: usize,
) -> (Vec<f32>, Vec<f32>, f32) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(u0.len(), rows);
    let mut u = u0.to_vec();
    let mut v = vec![0.0f32; cols];
    for _ in 0..iterations {
        v.fill(0.0);
        for (r, &ur) in u.iter().enumerate() {
            for (vc, &wv) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *vc += wv * ur;
            }
        }
        normalize(&mut v);
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        normalize(&mut u);
    }
    let sigma: f32 = u
        .iter()
        .enumerate()
        .map(|(r, &ur)| ur * w[r * cols..(r + 1) * cols].iter().zip(&v).map(|(a, b)| a * b).sum::<f32>())
        .sum();
    (u, v, sigma.max(1e-12))
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(shape: [usize; 4], seed: u64) -> Tensor {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_, _, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        })
    }

    /// Checks d(sum of weighted outputs)/d(param) against central differences.
    fn check_conv_grads(kind: ConvKind, act: Activation, stride: usize) {
        let x0 = pseudo([2, 3, 6, 6], 1);
        let w0 = match kind {
            ConvKind::Conv => pseudo([4, 3, 4, 4], 2),
            ConvKind::Transposed => pseudo([3, 4, 4, 4], 2),
        };
        let b0 = pseudo([1, 4, 1, 1], 3);
        let loss_of = |x: &Tensor, w: &Tensor, b: &Tensor| -> (f32, Graph, Var, Var, Var, Var) {
            let mut g = Graph::new();
            let xv = g.leaf(x.clone(), true);
            let wv = g.leaf(w.clone(), true);
            let bv = g.leaf(b.clone(), true);
            let y = g.conv(kind, xv, wv, Some(bv), stride, 1, act).unwrap();
            let l = g.squared_error_mean(y, 0.3);
            (g.value(l).data()[0], g, l, xv, wv, bv)
        };
        let (_, g, l, xv, wv, bv) = loss_of(&x0, &w0, &b0);
        let grads = g.backward(l).unwrap();
        let h = 1e-2f32;
        let mut checked = 0;
        for (which, base) in [(0, &x0), (1, &w0), (2, &b0)] {
            let analytic = grads.get([xv, wv, bv][which]).unwrap();
            for i in (0..base.numel()).step_by(7) {
                let mut plus = base.clone();
                plus.data_mut()[i] += h;
                let mut minus = base.clone();
                minus.data_mut()[i] -= h;
                let eval = |t: &Tensor| match which {
                    0 => loss_of(t, &w0, &b0).0,
                    1 => loss_of(&x0, t, &b0).0,
                    _ => loss_of(&x0, &w0, t).0,
                };
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[i];
                assert!(
                    (a - numeric).abs() <= 2e-3 + 2e-2 * numeric.abs(),
                    "{kind:?} {act:?} param {which} idx {i}: {a} vs {numeric}"
                );
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        check_conv_grads(ConvKind::Conv, Activation::None, 2);
        check_conv_grads(ConvKind::Conv, Activation::Tanh, 1);
    }

    #[test]
    fn conv_transpose_gradients_match_finite_differences() {
        check_conv_grads(ConvKind::Transposed, Activation::None, 2);
        check_conv_grads(ConvKind::Transposed, Activation::Tanh, 2);
    }

    #[test]
    fn spectral_norm_gradient_matches_finite_differences() {
        let w0 = pseudo([3, 2, 2, 2], 4);
        let target = pseudo([3, 2, 2, 2], 5);
        let u0 = vec![0.3, -0.5, 0.8];
        // converge u first so the fixed-u gradient is the true one
        let (u_conv, _, _) = power_iteration(w0.data(), 3, 8, &u0, 200);
        let eval = |w: &Tensor| -> f32 {
            let mut g = Graph::new();
            let wv = g.leaf(w.clone(), true);
            let t = g.input(target.clone());
            let (sn, _) = g.spectral_norm(wv, &u_conv, 200).unwrap();
            let l = g.l1_mean(sn, t).unwrap();
            g.value(l).data()[0]
        };
        let mut g = Graph::new();
        let wv = g.leaf(w0.clone(), true);
        let t = g.input(target.clone());
        let (sn, _) = g.spectral_norm(wv, &u_conv, 1).unwrap();
        let l = g.l1_mean(sn, t).unwrap();
        let grads = g.backward(l).unwrap();
        let analytic = grads.get(wv).unwrap();
        let h = 1e-3;
        for i in 0..w0.numel() {
            let mut p = w0.clone();
            p.data_mut()[i] += h;
            let mut m = w0.clone();
            m.data_mut()[i] -= h;
            let numeric = (eval(&p) - eval(&m)) / (2.0 * h);
            assert!(
                (analytic.data()[i] - numeric).abs() < 5e-3,
                "{i}: {} vs {numeric}",
                analytic.data()[i]
            );
        }
    }

    #[test]
    fn concat_routes_gradients_to_parts() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::full([1, 1, 2, 2], 1.0), true);
        let b = g.leaf(Tensor::full([1, 2, 2, 2], 0.0), true);
        let c = g.concat(&[a, b]).unwrap();
        let l = g.squared_error_mean(c, 0.0);
        let grads = g.backward(l).unwrap();
        // d/dx mean(x^2) = 2x / 12
        assert!(grads.get(a).unwrap().data().iter().all(|&v| (v - 2.0 / 12.0).abs() < 1e-7));
        assert!(grads.get(b).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_leaves_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full([1, 1, 3, 3], 0.5));
        let w = g.leaf(Tensor::full([1, 1, 3, 3], 0.1), false);
        let y = g.conv(ConvKind::Conv, x, w, None, 1, 1, Activation::Relu).unwrap();
        let l = g.squared_error_mean(y, 0.0);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(w).is_none());
        assert!(!g.needs_grad(y));
    }
}
