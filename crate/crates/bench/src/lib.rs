//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texgan_core::lbp::GrayImage;
use texgan_core::Tensor;

/// Uniform values in [−1, 1].
pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Intensities in [0, 255].
pub fn random_gray(size: usize, seed: u64) -> GrayImage<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GrayImage::from_fn(size, size, |_, _| rng.random_range(0.0..255.0))
}
