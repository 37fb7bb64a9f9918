//! Reconstruction, least-squares adversarial, LBP texture and combined losses.
//!
//! Every norm and expectation is reduced with a mean so the loss weights do
//! not depend on resolution or batch size.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::lbp::{self, GrayImage, LbpConfig};
use crate::nets::Stage;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub adv: f32,
    pub rec: f32,
    pub texture: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adv: 0.1,
            rec: 1.0,
            texture: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.adv, self.rec, self.texture].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Per-step loss values of one stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLosses {
    pub l_rec: f32,
    pub l_adv: f32,
    pub l_dis: f32,
    /// Only evaluated at the 256 stage.
    pub l_texture: Option<f32>,
    pub l_overall: f32,
}

/// Mean absolute difference.
pub fn l1_loss(output: &Tensor, target: &Tensor) -> Result<f32> {
    output.ensure_same_shape(target)?;
    Ok(crate::autograd::mean_abs_diff(output.data(), target.data()))
}

fn mean_sq_offset(scores: &Tensor, offset: f32) -> f32 {
    let sum: f64 = scores.data().iter().map(|&v| ((v - offset) as f64).powi(2)).sum();
    (sum / scores.numel() as f64) as f32
}

/// Discriminator objective: `mean((D(real) − 1)²) + mean(D(fake)²)`.
pub fn lsgan_d_loss(real_scores: &Tensor, fake_scores: &Tensor) -> Result<f32> {
    real_scores.ensure_same_shape(fake_scores)?;
    Ok(mean_sq_offset(real_scores, 1.0) + mean_sq_offset(fake_scores, 0.0))
}

/// Generator objective: `mean((D(fake) − 1)²)`.
pub fn lsgan_g_loss(fake_scores: &Tensor) -> f32 {
    mean_sq_offset(fake_scores, 1.0)
}

/// Maps a network value in [−1, 1] to the [0, 255] byte range.
#[inline]
pub fn to_byte_range<T: Float>(v: T) -> T {
    (v + T::one()) * T::from(127.5).unwrap()
}

fn gray_of<T: Float>(item: &[T], h: usize, w: usize) -> Result<GrayImage<T>> {
    let mapped: Vec<T> = item.iter().map(|&v| to_byte_range(v)).collect();
    lbp::to_gray(3, h, w, &mapped)
}

/// Texture loss of a batch `[n, 3, h, w]` of network-range images against a
/// target batch, together with its gradient with respect to `output`.
///
/// Value: mean over the cropped LBP grids of
/// `|LBP(Gray(output)) − LBP(Gray(target))|`. Works at any resolution the
/// LBP window fits in; the L1 subgradient at zero is taken as zero.
pub fn texture_loss_with_grad<T: Float>(
    shape: [usize; 4],
    output: &[T],
    target: &[T],
    cfg: &LbpConfig,
) -> Result<(T, Vec<T>)> {
    let [n, c, h, w] = shape;
    if c != 3 {
        return Err(Error::invalid(format!("texture loss needs RGB input, got {c} channels")));
    }
    let item = c * h * w;
    if output.len() != n * item || target.len() != n * item {
        return Err(Error::invalid("texture loss buffers do not match the shape"));
    }
    cfg.validate()?;
    let d = cfg.dilation;
    if h < cfg.min_side() || w < cfg.min_side() {
        return Err(Error::invalid(format!("{h}x{w} is too small for LBP dilation {d}")));
    }
    let grid = (h - 2 * d) * (w - 2 * d);
    let count = T::from(n * grid).unwrap();
    let scale = T::from(127.5).unwrap();
    let weights = lbp::GRAY_WEIGHTS.map(|v| T::from(v).unwrap());
    let mut total = T::zero();
    let mut grad = vec![T::zero(); output.len()];
    for b in 0..n {
        let gray_o = gray_of(&output[b * item..(b + 1) * item], h, w)?;
        let gray_t = gray_of(&target[b * item..(b + 1) * item], h, w)?;
        let lbp_o = lbp::lbp_surrogate(&gray_o, cfg)?;
        let lbp_t = lbp::lbp_surrogate(&gray_t, cfg)?;
        let mut upstream = lbp_o.clone();
        for (u, (&a, &t)) in upstream.pixels.iter_mut().zip(lbp_o.pixels.iter().zip(&lbp_t.pixels)) {
            let diff = a - t;
            total = total + diff.abs();
            *u = if diff > T::zero() {
                T::one() / count
            } else if diff < T::zero() {
                -T::one() / count
            } else {
                T::zero()
            };
        }
        let g_gray = lbp::lbp_surrogate_backward(&gray_o, cfg, &upstream)?;
        let plane = h * w;
        let g_item = &mut grad[b * item..(b + 1) * item];
        for (ch, &wc) in weights.iter().enumerate() {
            for (gv, &gg) in g_item[ch * plane..(ch + 1) * plane].iter_mut().zip(&g_gray.pixels) {
                *gv = gg * wc * scale;
            }
        }
    }
    Ok((total / count, grad))
}

/// Texture loss between the 256-resolution output and ground truth.
pub fn texture_loss(output: &Tensor, target: &Tensor, cfg: &LbpConfig) -> Result<f32> {
    check_texture_shapes(output, target)?;
    Ok(texture_loss_with_grad(output.shape(), output.data(), target.data(), cfg)?.0)
}

fn check_texture_shapes(output: &Tensor, target: &Tensor) -> Result<()> {
    let [n, _, _, _] = output.shape();
    output.ensure_shape([n, 3, 256, 256]).map_err(|_| {
        Error::invalid(format!(
            "texture loss is defined on 3x256x256 images, got {:?}",
            output.shape()
        ))
    })?;
    output.ensure_same_shape(target)
}

/// Adds the texture loss of `output` against a constant target to the graph.
pub fn texture_loss_node(graph: &mut Graph, output: Var, target: &Tensor, cfg: &LbpConfig) -> Result<Var> {
    let value = graph.value(output);
    check_texture_shapes(value, target)?;
    let (loss, grad) = texture_loss_with_grad(value.shape(), value.data(), target.data(), cfg)?;
    let grad = Tensor::new(value.shape(), grad)?;
    graph.scalar_with_grad(output, loss, grad)
}

/// `λ_adv·l_adv + λ_rec·l_rec + λ_texture·l_texture`; the texture term is only
/// permitted at the 256 stage.
pub fn overall_loss(stage: Stage, losses: &StageLosses, weights: &LossWeights) -> Result<f32> {
    let texture = match (stage, losses.l_texture) {
        (Stage::S256, Some(t)) => t,
        (_, None) => 0.0,
        (s, Some(_)) => {
            return Err(Error::invalid(format!(
                "texture loss is only used at the 256 stage, got stage {}",
                s.resolution()
            )))
        }
    };
    Ok(weights.adv * losses.l_adv + weights.rec * losses.l_rec + weights.texture * texture)
}
