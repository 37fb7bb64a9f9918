//! Training and test image sources.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio;
use crate::nets::BASE_RESOLUTION;
use crate::tensor::Tensor;

/// Random access to `[1, 3, 256, 256]` images in [−1, 1].
pub trait Dataset: Send + Sync {
    fn len(&self) -> usize;

    fn get(&self, index: usize) -> Result<Tensor>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

const EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// An indexed directory of images. Files are decoded on access.
#[derive(Clone, Debug)]
pub struct DatasetHandle {
    pub root: PathBuf,
    pub split: Split,
    pub resolution: usize,
    pub files: Vec<PathBuf>,
}

/// Recursively indexes `root/<split>` (or `root` itself when that
/// subdirectory does not exist). Files that do not decode are skipped with a
/// warning; the index is sorted by path.
pub fn ingest(root: &Path, split: Split) -> Result<DatasetHandle> {
    if !root.is_dir() {
        return Err(Error::invalid(format!("dataset root {} is not a directory", root.display())));
    }
    let sub = root.join(split.dir_name());
    let base = if sub.is_dir() { sub } else { root.to_path_buf() };
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(&base).follow_links(true) {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if !EXTENSIONS.contains(&ext.as_str()) {
            log::warn!("skipping non-image file {}", path.display());
            continue;
        }
        match image::image_dimensions(path) {
            Ok(_) => files.push(path.to_path_buf()),
            Err(e) => log::warn!("skipping undecodable image {}: {e}", path.display()),
        }
    }
    files.sort();
    if files.is_empty() {
        log::warn!("dataset {} contains no images", base.display());
    }
    Ok(DatasetHandle {
        root: root.to_path_buf(),
        split,
        resolution: BASE_RESOLUTION,
        files,
    })
}

impl Dataset for DatasetHandle {
    fn len(&self) -> usize {
        self.files.len()
    }

    fn get(&self, index: usize) -> Result<Tensor> {
        let path = self
            .files
            .get(index)
            .ok_or_else(|| Error::invalid(format!("index {index} out of range for {} items", self.files.len())))?;
        let img = imageio::read_rgb(path)?;
        Ok(imageio::rgb_to_tensor(&imageio::center_square(&img, self.resolution as u32)))
    }
}

/// Procedural texture images, generated lazily from `(seed, index)`.
///
/// Each item mixes an oriented grating, a checkerboard or a dot lattice with
/// random colours, plus mild pixel noise.
#[derive(Clone, Debug)]
pub struct SyntheticTextures {
    pub count: usize,
    pub seed: u64,
    pub resolution: usize,
}

impl SyntheticTextures {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            seed,
            resolution: BASE_RESOLUTION,
        }
    }
}

impl Dataset for SyntheticTextures {
    fn len(&self) -> usize {
        self.count
    }

    fn get(&self, index: usize) -> Result<Tensor> {
        if index >= self.count {
            return Err(Error::invalid(format!("index {index} out of range for {} items", self.count)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let n = self.resolution;
        let kind = rng.random_range(0..3u8);
        let period = rng.random_range(6.0..40.0f32) * n as f32 / 256.0;
        let theta = rng.random_range(0.0..std::f32::consts::PI);
        let (s, c) = theta.sin_cos();
        let phase = rng.random_range(0.0..period);
        let color = |rng: &mut ChaCha8Rng| [0; 3].map(|_: i32| rng.random_range(-0.9..0.9f32));
        let (a, b) = (color(&mut rng), color(&mut rng));
        let noise = rng.random_range(0.0..0.08f32);
        let tau = std::f32::consts::TAU;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut data = vec![0.0f32; 3 * n * n];
        for y in 0..n {
            for x in 0..n {
                let (xf, yf) = (x as f32, y as f32);
                let u = c * xf + s * yf + phase;
                let t = match kind {
                    0 => 0.5 + 0.5 * (tau * u / period).sin(),
                    1 => {
                        let v = -s * xf + c * yf;
                        let parity = (u / period).floor() as i64 + (v / period).floor() as i64;
                        parity.rem_euclid(2) as f32
                    }
                    _ => {
                        let v = -s * xf + c * yf;
                        let du = (u / period).rem_euclid(1.0) - 0.5;
                        let dv = (v / period).rem_euclid(1.0) - 0.5;
                        if du * du + dv * dv < 0.09 { 1.0 } else { 0.0 }
                    }
                };
                let jitter = noise * (noise_rng.random::<f32>() - 0.5);
                for ch in 0..3 {
                    data[(ch * n + y) * n + x] = (a[ch] + (b[ch] - a[ch]) * t + jitter).clamp(-1.0, 1.0);
                }
            }
        }
        Tensor::new([1, 3, n, n], data)
    }
}
