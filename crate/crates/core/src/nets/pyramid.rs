//! Progressive evaluation of the generator stack.

use crate::error::{Error, Result};
use crate::nets::model::{Generator, GeneratorInputs};
use crate::nets::spec::Stage;
use crate::tensor::Tensor;

/// Full-resolution side length the pyramid works from.
pub const BASE_RESOLUTION: usize = 256;

/// Generated images of every evaluated stage, indexed by [`Stage::index`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PyramidOutput {
    pub outputs: [Option<Tensor>; 4],
}

impl PyramidOutput {
    pub fn get(&self, stage: Stage) -> Option<&Tensor> {
        self.outputs[stage.index()].as_ref()
    }

    /// Output of the highest evaluated stage.
    pub fn finest(&self) -> Option<(Stage, &Tensor)> {
        Stage::ALL
            .iter()
            .rev()
            .find_map(|&s| self.get(s).map(|t| (s, t)))
    }
}

/// Corrupted image and mask resampled to a stage: area averaging for the
/// image, nearest neighbour for the mask, and the image re-masked so holes
/// are exactly zero.
pub fn stage_inputs(corrupted: &Tensor, mask: &Tensor, stage: Stage) -> Result<(Tensor, Tensor)> {
    let [n, _, h, w] = corrupted.shape();
    corrupted.ensure_shape([n, 3, BASE_RESOLUTION, BASE_RESOLUTION])?;
    mask.ensure_shape([n, 1, h, w])?;
    let r = stage.resolution();
    let mask_r = mask.resize_nearest(r, r);
    let image_r = corrupted
        .downsample_area(BASE_RESOLUTION / r)?
        .mul_broadcast_channels(&mask_r)?;
    Ok((image_r, mask_r))
}

/// Evaluates generators 32 → `upto` in order, feeding each the outputs of
/// the stages below it. `generators` is indexed by [`Stage::index`].
pub fn forward_pyramid(
    corrupted: &Tensor,
    mask: &Tensor,
    upto: Stage,
    generators: &[Option<&Generator>],
) -> Result<PyramidOutput> {
    let mut out = PyramidOutput::default();
    for &stage in &Stage::ALL[..=upto.index()] {
        let g = generators
            .get(stage.index())
            .copied()
            .flatten()
            .ok_or_else(|| Error::State(format!("no weights for the stage-{stage} generator")))?;
        if g.stage() != stage {
            return Err(Error::State(format!(
                "slot {stage} holds the stage-{} generator",
                g.stage()
            )));
        }
        let (image_r, mask_r) = stage_inputs(corrupted, mask, stage)?;
        let o = g.infer(&GeneratorInputs {
            corrupted: &image_r,
            mask: &mask_r,
            priors: &out.outputs,
        })?;
        out.outputs[stage.index()] = Some(o);
    }
    Ok(out)
}

/// `O ⊙ (1 − M) + I ⊙ M`: keeps known pixels from the input.
pub fn composite(output: &Tensor, corrupted: &Tensor, mask: &Tensor) -> Result<Tensor> {
    output.ensure_same_shape(corrupted)?;
    let [n, c, h, w] = output.shape();
    mask.ensure_shape([n, 1, h, w])?;
    let mut res = output.clone();
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let m = mask.at(b, 0, y, x);
                    let v = output.at(b, ch, y, x) * (1.0 - m) + corrupted.at(b, ch, y, x) * m;
                    res.set(b, ch, y, x, v);
                }
            }
        }
    }
    Ok(res)
}
