//! Texture-aware progressive multi-GAN image inpainting.
//!
//! Four generators work at 32, 64, 128 and 256 pixels; each one consumes the
//! corrupted image plus the already inpainted lower resolutions. The top
//! stage is additionally trained with a differentiable local-binary-pattern
//! texture loss. The crate contains the small autograd engine the networks
//! run on, the network definitions, losses, mask generators, the progressive
//! trainer, and evaluation metrics.

pub mod autograd;
pub mod data;
pub mod edges;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod inference;
pub mod lbp;
pub mod losses;
pub mod masks;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use data::{Dataset, DatasetHandle, SyntheticTextures};
pub use inference::{InpaintOptions, InpaintOutput, Inpainter};
pub use lbp::{LbpConfig, TieRule};
pub use losses::{LossWeights, StageLosses};
pub use masks::{Mask, MaskBin};
pub use nets::{EfficiencyReport, GeneratorSpec, InitScheme, LayerSpec, NetworkSpec, PyramidOutput, Stage};
pub use tensor::Tensor;
pub use train::{Checkpoint, MaskSource, TrainConfig, Trainer};
pub use eval::{BenchReport, MetricsReport};
pub use edges::{CannyConfig, EdgeReport};
