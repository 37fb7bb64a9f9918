//! Hole masks: free-form brush strokes, rectangles, outpainting bands, and
//! hole-ratio bins. Convention: 1.0 = known pixel, 0.0 = hole.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Mask {
    /// Validates binarity and that at least one pixel is known.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid("mask buffer does not match its dimensions"));
        }
        if data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("mask values must be exactly 0 or 1"));
        }
        if !data.contains(&1.0) {
            return Err(Error::invalid("mask has no known pixels"));
        }
        Ok(Self { height, width, data })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_known(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1.0
    }

    pub fn hole_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 0.0).count()
    }

    pub fn hole_ratio(&self) -> f64 {
        self.hole_count() as f64 / self.data.len() as f64
    }

    pub fn bin(&self) -> MaskBin {
        classify(self)
    }

    /// `[1, 1, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, 1, self.height, self.width], self.data.clone()).expect("dimensions match")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [n, c, h, w] = t.shape();
        if n != 1 || c != 1 {
            return Err(Error::invalid(format!("mask tensor must be [1,1,H,W], got {:?}", t.shape())));
        }
        Self::new(h, w, t.data().to_vec())
    }

    /// Nearest-neighbour resampling; the result stays binary.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Mask {
        let t = self.to_tensor().resize_nearest(height, width);
        Mask {
            height,
            width,
            data: t.into_data(),
        }
    }
}

/// Hole-ratio category used for evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MaskBin {
    #[serde(rename = "10-20")]
    R10To20,
    #[serde(rename = "20-30")]
    R20To30,
    #[serde(rename = "30-40")]
    R30To40,
    #[serde(rename = "40-50")]
    R40To50,
    #[serde(rename = "other")]
    Other,
}

impl MaskBin {
    pub const RANGED: [MaskBin; 4] = [MaskBin::R10To20, MaskBin::R20To30, MaskBin::R30To40, MaskBin::R40To50];

    /// `(low, high)` hole-ratio bounds; `None` for [`MaskBin::Other`].
    pub fn bounds(self) -> Option<(f64, f64)> {
        match self {
            MaskBin::R10To20 => Some((0.1, 0.2)),
            MaskBin::R20To30 => Some((0.2, 0.3)),
            MaskBin::R30To40 => Some((0.3, 0.4)),
            MaskBin::R40To50 => Some((0.4, 0.5)),
            MaskBin::Other => None,
        }
    }

    /// Half-open `[low, high)`, except the top bin which includes 0.5.
    pub fn contains(self, ratio: f64) -> bool {
        match self.bounds() {
            Some((lo, hi)) if self == MaskBin::R40To50 => ratio >= lo && ratio <= hi,
            Some((lo, hi)) => ratio >= lo && ratio < hi,
            None => MaskBin::RANGED.iter().all(|b| !b.contains(ratio)),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MaskBin::R10To20 => "10-20",
            MaskBin::R20To30 => "20-30",
            MaskBin::R30To40 => "30-40",
            MaskBin::R40To50 => "40-50",
            MaskBin::Other => "other",
        }
    }
}

impl std::fmt::Display for MaskBin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for MaskBin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().trim_end_matches('%').replace('%', "");
        match norm.as_str() {
            "10-20" => Ok(MaskBin::R10To20),
            "20-30" => Ok(MaskBin::R20To30),
            "30-40" => Ok(MaskBin::R30To40),
            "40-50" => Ok(MaskBin::R40To50),
            "other" => Ok(MaskBin::Other),
            _ => Err(Error::Config(format!(
                "unknown mask bin {s:?}; expected 10-20, 20-30, 30-40, 40-50 or other"
            ))),
        }
    }
}

pub fn classify(mask: &Mask) -> MaskBin {
    let r = mask.hole_ratio();
    MaskBin::RANGED
        .into_iter()
        .find(|b| b.contains(r))
        .unwrap_or(MaskBin::Other)
}

const MAX_FREEFORM_ATTEMPTS: usize = 200;

/// Paints capsule-shaped strokes (segments with round caps) into a mask
/// while tracking the hole count.
struct Canvas {
    height: usize,
    width: usize,
    data: Vec<f32>,
    holes: usize,
}

impl Canvas {
    fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1.0; height * width],
            holes: 0,
        }
    }

    fn ratio(&self) -> f64 {
        self.holes as f64 / self.data.len() as f64
    }

    fn segment(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), radius: f64) {
        let min_x = (x0.min(x1) - radius).floor().max(0.0) as usize;
        let max_x = ((x0.max(x1) + radius).ceil() as isize).clamp(0, self.width as isize - 1) as usize;
        let min_y = (y0.min(y1) - radius).floor().max(0.0) as usize;
        let max_y = ((y0.max(y1) + radius).ceil() as isize).clamp(0, self.height as isize - 1) as usize;
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len2 = dx * dx + dy * dy;
        let r2 = radius * radius;
        for y in min_y..=max_y {
            for x in min_x..=max_x {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = if len2 > 0.0 {
                    (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (cx, cy) = (x0 + t * dx, y0 + t * dy);
                if (px - cx).powi(2) + (py - cy).powi(2) <= r2 {
                    let cell = &mut self.data[y * self.width + x];
                    if *cell == 1.0 {
                        *cell = 0.0;
                        self.holes += 1;
                    }
                }
            }
        }
    }
}

/// Random free-form brush-stroke mask whose hole ratio lies in `target`.
///
/// Strokes have 1–12 vertices, random headings, segment lengths of 10–60 px
/// and thickness 5–40 px, all measured at 256 px and scaled with the image.
/// Painting stops as soon as the ratio reaches the bin's lower bound; a
/// canvas that overshoots is discarded and redrawn.
pub fn gen_freeform(height: usize, width: usize, target: MaskBin, seed: u64) -> Result<Mask> {
    if height < 32 || width < 32 {
        return Err(Error::invalid(format!(
            "free-form masks need at least 32x32 pixels, got {height}x{width}"
        )));
    }
    let (lo, _) = target
        .bounds()
        .ok_or_else(|| Error::MaskGeneration("cannot target the `other` bin".into()))?;
    let scale = height.min(width) as f64 / 256.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_FREEFORM_ATTEMPTS {
        let mut canvas = Canvas::new(height, width);
        'strokes: while canvas.ratio() < lo {
            let vertices = rng.random_range(1..=12);
            let radius = rng.random_range(5.0..=40.0) * scale / 2.0;
            let mut p = (
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
            );
            let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            for _ in 0..vertices {
                heading += rng.random_range(-1.2..1.2);
                let len = rng.random_range(10.0..60.0) * scale;
                let q = (
                    (p.0 + len * heading.cos()).clamp(0.0, width as f64),
                    (p.1 + len * heading.sin()).clamp(0.0, height as f64),
                );
                canvas.segment(p, q, radius);
                p = q;
                if canvas.ratio() >= lo {
                    break 'strokes;
                }
            }
        }
        let mask = Mask {
            height,
            width,
            data: canvas.data,
        };
        if classify(&mask) == target {
            return Ok(mask);
        }
    }
    Err(Error::MaskGeneration(format!(
        "no {height}x{width} mask in bin {target} after {MAX_FREEFORM_ATTEMPTS} attempts"
    )))
}

/// One axis-aligned rectangular hole with sides drawn uniformly from
/// `[H/4, H/2] × [W/4, W/2]` at a uniform position inside the image.
pub fn gen_block(height: usize, width: usize, seed: u64) -> Result<Mask> {
    if height < 4 || width < 4 {
        return Err(Error::invalid(format!("block masks need at least 4x4 pixels, got {height}x{width}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bh = rng.random_range(height / 4..=height / 2);
    let bw = rng.random_range(width / 4..=width / 2);
    let top = rng.random_range(0..=height - bh);
    let left = rng.random_range(0..=width - bw);
    Ok(rect_mask(height, width, top, left, bh, bw))
}

/// Mask with a single `bh × bw` hole at `(top, left)`.
pub fn rect_mask(height: usize, width: usize, top: usize, left: usize, bh: usize, bw: usize) -> Mask {
    let mut data = vec![1.0; height * width];
    for y in top..(top + bh).min(height) {
        data[y * width + left..y * width + (left + bw).min(width)].fill(0.0);
    }
    Mask { height, width, data }
}

/// Left and right quarters are holes: columns `[0, W/4)` and `[3W/4, W)`.
pub fn gen_outpaint(height: usize, width: usize) -> Result<Mask> {
    if width < 4 || height == 0 {
        return Err(Error::invalid(format!("outpainting masks need width >= 4, got {width}")));
    }
    let (left, right) = (width / 4, 3 * width / 4);
    let mut data = vec![1.0; height * width];
    for row in data.chunks_mut(width) {
        row[..left].fill(0.0);
        row[right..].fill(0.0);
    }
    Ok(Mask { height, width, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&Mask::ones(256, 256)), MaskBin::Other);
        assert_eq!(classify(&rect_mask(256, 256, 10, 10, 64, 64)), MaskBin::Other);
        assert_eq!(classify(&rect_mask(256, 256, 64, 64, 128, 128)), MaskBin::R20To30);
        assert_eq!(rect_mask(256, 256, 64, 64, 128, 128).hole_ratio(), 0.25);
    }

    #[test]
    fn bin_edges() {
        let with_ratio = |holes: usize| {
            let mut data = vec![1.0; 100];
            data[..holes].fill(0.0);
            Mask::new(10, 10, data).unwrap()
        };
        assert_eq!(classify(&with_ratio(9)), MaskBin::Other);
        assert_eq!(classify(&with_ratio(10)), MaskBin::R10To20);
        assert_eq!(classify(&with_ratio(20)), MaskBin::R20To30);
        assert_eq!(classify(&with_ratio(40)), MaskBin::R40To50);
        assert_eq!(classify(&with_ratio(50)), MaskBin::R40To50);
        assert_eq!(classify(&with_ratio(51)), MaskBin::Other);
    }

    #[test]
    fn mask_validation() {
        assert!(Mask::new(1, 2, vec![0.5, 1.0]).is_err());
        assert!(Mask::new(1, 2, vec![0.0, 0.0]).is_err());
        assert!(Mask::new(1, 2, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn outpaint_examples() {
        let m = gen_outpaint(256, 256).unwrap();
        assert_eq!(m.hole_ratio(), 0.5);
        for y in 0..256 {
            for x in 64..192 {
                assert!(m.is_known(y, x));
            }
        }
        for w in [9, 10, 11, 13, 255] {
            let m = gen_outpaint(8, w).unwrap();
            assert!((m.hole_ratio() - 0.5).abs() <= 1.0 / w as f64, "w={w}");
        }
    }

    #[test]
    fn freeform_hits_each_bin_and_is_deterministic() {
        for bin in MaskBin::RANGED {
            let a = gen_freeform(256, 256, bin, 3).unwrap();
            assert_eq!(classify(&a), bin);
            assert_eq!(a, gen_freeform(256, 256, bin, 3).unwrap());
        }
        assert_ne!(
            gen_freeform(256, 256, MaskBin::R30To40, 1).unwrap(),
            gen_freeform(256, 256, MaskBin::R30To40, 2).unwrap()
        );
    }

    #[test]
    fn freeform_errors() {
        assert!(gen_freeform(16, 256, MaskBin::R10To20, 0).is_err());
        assert!(matches!(
            gen_freeform(64, 64, MaskBin::Other, 0),
            Err(Error::MaskGeneration(_))
        ));
    }

    #[test]
    fn block_stays_inside_bounds() {
        for seed in 0..10_000 {
            let m = gen_block(256, 256, seed).unwrap();
            let holes = m.hole_count();
            assert!(holes >= 64 * 64 && holes <= 128 * 128, "seed {seed}: {holes}");
        }
        assert_eq!(gen_block(256, 256, 9).unwrap(), gen_block(256, 256, 9).unwrap());
    }

    #[test]
    fn bins_parse_from_labels() {
        for b in MaskBin::RANGED.into_iter().chain([MaskBin::Other]) {
            assert_eq!(b.label().parse::<MaskBin>().unwrap(), b);
        }
        assert_eq!("30-40%".parse::<MaskBin>().unwrap(), MaskBin::R30To40);
        assert!("5-10".parse::<MaskBin>().is_err());
    }

    proptest! {
        #[test]
        fn nearest_downsampling_preserves_binarity(seed in 0u64..1000) {
            let m = gen_block(256, 256, seed).unwrap();
            for s in [32, 64, 128] {
                let d = m.resize_nearest(s, s);
                prop_assert!(d.data().iter().all(|&v| v == 0.0 || v == 1.0));
            }
        }
    }
}
