//! Analytic parameter and operation counts from layer specs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::spec::{DiscriminatorSpec, GeneratorSpec, LayerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub params: u64,
    /// Multiply-accumulates over the layer's output grid.
    pub macs: u64,
    pub out_channels: usize,
    pub out_size: usize,
}

/// Totals always equal the sum over `per_layer`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub input_size: usize,
    pub total_params: u64,
    pub total_macs: u64,
    /// Multiply-add counted as two operations.
    pub total_flops: u64,
    pub per_layer: Vec<LayerCost>,
}

impl EfficiencyReport {
    fn from_layers(input_size: usize, per_layer: Vec<LayerCost>) -> Self {
        let total_params = per_layer.iter().map(|l| l.params).sum();
        let total_macs: u64 = per_layer.iter().map(|l| l.macs).sum();
        Self {
            input_size,
            total_params,
            total_macs,
            total_flops: 2 * total_macs,
            per_layer,
        }
    }

    pub fn params_millions(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    /// Giga multiply-accumulates. This is the figure inference-cost tables
    /// usually print under "GFLOPs".
    pub fn gmacs(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }

    pub fn gflops(&self) -> f64 {
        self.total_flops as f64 / 1e9
    }
}

/// Counts parameters and operations of one pyramid inference at `input_size`
/// (each generator runs at its own stage resolution).
pub fn count_efficiency(specs: &[GeneratorSpec], input_size: usize) -> Result<EfficiencyReport> {
    if input_size != 256 {
        return Err(Error::Config(format!(
            "the pyramid runs on 256x256 inputs, got {input_size}"
        )));
    }
    let mut per_layer = Vec::new();
    for spec in specs {
        let trace = spec.trace_shapes()?;
        for (bi, (block, shapes)) in spec.blocks.iter().zip(&trace).enumerate() {
            for (li, (layer, &(ch, size))) in block.layers.iter().zip(shapes).enumerate() {
                per_layer.push(LayerCost {
                    name: format!("g{}.b{bi}.l{li}", spec.stage.resolution()),
                    kind: layer.kind,
                    params: layer.param_count(),
                    macs: layer.macs(size, size),
                    out_channels: ch,
                    out_size: size,
                });
            }
        }
    }
    Ok(EfficiencyReport::from_layers(input_size, per_layer))
}

/// Counts for one scoring pass of each discriminator at its stage resolution.
pub fn count_discriminators(specs: &[DiscriminatorSpec]) -> Result<EfficiencyReport> {
    let mut per_layer = Vec::new();
    for spec in specs {
        let mut size = spec.stage.resolution();
        for (li, layer) in spec.layers.iter().enumerate() {
            size = layer.output_size(size)?;
            per_layer.push(LayerCost {
                name: format!("d{}.l{li}", spec.stage.resolution()),
                kind: layer.kind,
                params: layer.param_count(),
                macs: layer.macs(size, size),
                out_channels: layer.out_ch,
                out_size: size,
            });
        }
    }
    Ok(EfficiencyReport::from_layers(256, per_layer))
}
