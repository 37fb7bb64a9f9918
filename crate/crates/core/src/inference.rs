//! Inpainting of arbitrary-size images with a trained generator stack.

use std::path::Path;

use image::imageops::FilterType;
use image::RgbImage;

use crate::error::{Error, Result};
use crate::imageio::{rgb_to_tensor, tensor_to_rgb};
use crate::masks::{Mask, MaskBin};
use crate::nets::{count_efficiency, forward_pyramid, EfficiencyReport, Generator, PyramidOutput, Stage, BASE_RESOLUTION};
use crate::tensor::Tensor;
use crate::train::Checkpoint;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InpaintOptions {
    /// Keep known pixels from the input.
    pub composite: bool,
    /// Also return the 32, 64, 128 and 256 stage outputs.
    pub return_pyramid: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InpaintOutput {
    /// Same size as the input image.
    pub result: RgbImage,
    /// Stage outputs at their native resolutions, when requested.
    pub pyramid: Vec<(Stage, RgbImage)>,
    pub hole_ratio: f64,
    pub bin: MaskBin,
}

/// Read-only generator stack.
#[derive(Clone, Debug)]
pub struct Inpainter {
    generators: Vec<Generator>,
    blind: bool,
}

impl Inpainter {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Self {
        Self {
            generators: ckpt.generators.clone(),
            blind: ckpt.config.blind_mode,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_checkpoint(&Checkpoint::load(path)?))
    }

    pub fn blind(&self) -> bool {
        self.blind
    }

    pub fn efficiency(&self) -> Result<EfficiencyReport> {
        let specs: Vec<_> = self.generators.iter().map(|g| g.spec.clone()).collect();
        count_efficiency(&specs, BASE_RESOLUTION)
    }

    /// Runs the full pyramid on `[n, 3, 256, 256]` ground-truth-range images
    /// already multiplied by `mask` (`[n, 1, 256, 256]`).
    pub fn run_pyramid(&self, corrupted: &Tensor, mask: &Tensor) -> Result<PyramidOutput> {
        let refs: Vec<Option<&Generator>> = self.generators.iter().map(Some).collect();
        forward_pyramid(corrupted, mask, Stage::S256, &refs)
    }

    /// Inpaints `image` where `mask` marks holes. The model sees a 256×256
    /// resize of the whole image; its output is resized back, and with
    /// `composite` the original known pixels are kept. A missing mask is only
    /// accepted in blind mode and means "nothing is known to be missing".
    pub fn inpaint(&self, image: &RgbImage, mask: Option<&Mask>, opts: InpaintOptions) -> Result<InpaintOutput> {
        let (w, h) = image.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::invalid("empty image"));
        }
        let full_mask = match mask {
            Some(m) => {
                if (m.width(), m.height()) != (w as usize, h as usize) {
                    return Err(Error::ShapeMismatch {
                        expected: vec![h as usize, w as usize],
                        actual: vec![m.height(), m.width()],
                    });
                }
                m.clone()
            }
            None if self.blind => Mask::ones(h as usize, w as usize),
            None => return Err(Error::invalid("a mask is required unless the model is blind")),
        };
        let n = BASE_RESOLUTION as u32;
        let small = if (w, h) == (n, n) {
            image.clone()
        } else {
            image::imageops::resize(image, n, n, FilterType::Triangle)
        };
        let mask_small = shrink_mask(&full_mask, BASE_RESOLUTION);
        let m = mask_small.to_tensor();
        let corrupted = rgb_to_tensor(&small).mul_broadcast_channels(&m)?;
        let pyramid = self.run_pyramid(&corrupted, &m)?;
        let out = pyramid.get(Stage::S256).expect("pyramid reaches 256");
        let mut result = tensor_to_rgb(out)?;
        if (w, h) != (n, n) {
            result = image::imageops::resize(&result, w, h, FilterType::Triangle);
        }
        if opts.composite {
            for (x, y, px) in result.enumerate_pixels_mut() {
                if full_mask.is_known(y as usize, x as usize) {
                    *px = *image.get_pixel(x, y);
                }
            }
        }
        let pyramid = if opts.return_pyramid {
            Stage::ALL
                .iter()
                .map(|&s| Ok((s, tensor_to_rgb(pyramid.get(s).expect("all stages run"))?)))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(InpaintOutput {
            result,
            pyramid,
            hole_ratio: full_mask.hole_ratio(),
            bin: full_mask.bin(),
        })
    }
}

/// Resamples a mask to `size × size`; a target pixel is a hole if any source
/// pixel it covers is a hole, so thin holes survive downscaling.
fn shrink_mask(mask: &Mask, size: usize) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    if (h, w) == (size, size) {
        return mask.clone();
    }
    let mut data = vec![1.0f32; size * size];
    for ty in 0..size {
        let (y0, y1) = span(ty, size, h);
        for tx in 0..size {
            let (x0, x1) = span(tx, size, w);
            let hole = (y0..y1).any(|y| (x0..x1).any(|x| !mask.is_known(y, x)));
            if hole {
                data[ty * size + tx] = 0.0;
            }
        }
    }
    // an all-hole result is not a valid mask; keep one pixel known
    if data.iter().all(|&v| v == 0.0) {
        data[0] = 1.0;
    }
    Mask::new(size, size, data).expect("binary mask with a known pixel")
}

/// Source range covered by target index `t` when mapping `target` cells onto
/// `source` cells; never empty.
fn span(t: usize, target: usize, source: usize) -> (usize, usize) {
    let start = t * source / target;
    let end = ((t + 1) * source).div_ceil(target).max(start + 1);
    (start, end.min(source))
}
