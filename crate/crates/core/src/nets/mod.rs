//! Generators, discriminators, their wiring and cost accounting.

pub mod efficiency;
pub mod model;
pub mod pyramid;
pub mod spec;

pub use crate::autograd::Activation;
pub use efficiency::{count_discriminators, count_efficiency, EfficiencyReport, LayerCost};
pub use model::{init_weights, ConvLayer, Discriminator, Generator, GeneratorInputs, InitScheme, INIT_STD};
pub use pyramid::{composite, forward_pyramid, stage_inputs, PyramidOutput, BASE_RESOLUTION};
pub use spec::{
    BlockInput, BlockSpec, DiscriminatorSpec, GeneratorSpec, LayerKind, LayerSpec, NetworkSpec, Stage,
};
