//! Declarative layer tables for the four generators and discriminators.

use serde::{Deserialize, Serialize};

use crate::autograd::Activation;
use crate::error::{Error, Result};

/// One of the four progressive resolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Stage {
    S32,
    S64,
    S128,
    S256,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::S32, Stage::S64, Stage::S128, Stage::S256];

    pub fn resolution(self) -> usize {
        32 << self.index()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_resolution(n: usize) -> Result<Stage> {
        match n {
            32 => Ok(Stage::S32),
            64 => Ok(Stage::S64),
            128 => Ok(Stage::S128),
            256 => Ok(Stage::S256),
            _ => Err(Error::Config(format!(
                "unsupported resolution {n}; expected 32, 64, 128 or 256"
            ))),
        }
    }

    /// Stages strictly below this one.
    pub fn lower(self) -> &'static [Stage] {
        &Stage::ALL[..self.index()]
    }

    pub fn next(self) -> Option<Stage> {
        Stage::ALL.get(self.index() + 1).copied()
    }
}

impl TryFrom<u32> for Stage {
    type Error = Error;

    fn try_from(v: u32) -> Result<Self> {
        Stage::from_resolution(v as usize)
    }
}

impl From<Stage> for u32 {
    fn from(s: Stage) -> u32 {
        s.resolution() as u32
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.resolution())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    TransposedConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
    pub spectral_norm: bool,
    pub bias: bool,
}

impl LayerSpec {
    pub fn conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Conv,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding: 1,
            activation,
            spectral_norm: false,
            bias: true,
        }
    }

    /// Exact ×2 upsampling: kernel 4, stride 2, padding 1.
    pub fn transposed(in_ch: usize, out_ch: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::TransposedConv,
            kernel: 4,
            stride: 2,
            ..Self::conv(in_ch, out_ch, 4, 2, activation)
        }
    }

    pub fn spectral(mut self) -> Self {
        self.spectral_norm = true;
        self.bias = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.in_ch > 0
            && self.out_ch > 0
            && matches!(self.kernel, 3 | 4)
            && matches!(self.stride, 1 | 2)
            && self.padding == 1
            && !(self.spectral_norm && self.bias);
        if ok {
            Ok(())
        } else {
            Err(Error::Construction(format!("invalid layer spec {self:?}")))
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            LayerKind::Conv => [self.out_ch, self.in_ch, self.kernel, self.kernel],
            LayerKind::TransposedConv => [self.in_ch, self.out_ch, self.kernel, self.kernel],
        }
    }

    pub fn output_size(&self, input: usize) -> Result<usize> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let out = match self.kind {
            LayerKind::Conv => crate::autograd::conv::conv_out_size(input, k, s, p),
            LayerKind::TransposedConv => crate::autograd::conv::conv_transpose_out_size(input, k, s, p),
        };
        out.filter(|&o| o > 0)
            .ok_or_else(|| Error::Construction(format!("input size {input} too small for {self:?}")))
    }

    pub fn param_count(&self) -> u64 {
        let w = (self.kernel * self.kernel * self.in_ch * self.out_ch) as u64;
        w + if self.bias { self.out_ch as u64 } else { 0 }
    }

    /// Multiply-accumulate count for an output of `out_h × out_w`.
    pub fn macs(&self, out_h: usize, out_w: usize) -> u64 {
        (self.kernel * self.kernel * self.in_ch * self.out_ch) as u64 * (out_h * out_w) as u64
    }
}

/// What a generator block consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", content = "stage")]
pub enum BlockInput {
    /// Corrupted RGB plus mask (or RGB alone in blind mode).
    CorruptedAndMask,
    /// Output of an already trained lower stage.
    Prior(Stage),
    /// Channel concatenation of all preceding block outputs.
    Fusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub input: BlockInput,
    /// Bilinear resize of the block input before its first layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resize_to: Option<usize>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub stage: Stage,
    pub blind: bool,
    pub blocks: Vec<BlockSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub stage: Stage,
    pub base_width: usize,
    pub layers: Vec<LayerSpec>,
}

const RELU: Activation = Activation::Relu;

fn encoder(in_ch: usize, width: usize, strides: [usize; 2]) -> Vec<LayerSpec> {
    let k = |s: usize| if s == 2 { 4 } else { 3 };
    vec![
        LayerSpec::conv(in_ch, width, 3, 1, RELU),
        LayerSpec::conv(width, 2 * width, k(strides[0]), strides[0], RELU),
        LayerSpec::conv(2 * width, 2 * width, k(strides[1]), strides[1], RELU),
    ]
}

fn decoder(in_ch: usize, width: usize) -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::conv(in_ch, 4 * width, 3, 1, RELU)];
    layers.extend((0..4).map(|_| LayerSpec::conv(4 * width, 4 * width, 3, 1, RELU)));
    layers.push(LayerSpec::transposed(4 * width, 2 * width, RELU));
    layers.push(LayerSpec::transposed(2 * width, width, RELU));
    layers.push(LayerSpec::conv(width, 3, 3, 1, Activation::Tanh));
    layers
}

impl GeneratorSpec {
    /// The shipped layer table for `stage`. In blind mode the first branch
    /// sees only the corrupted RGB image.
    pub fn standard(stage: Stage, blind: bool) -> Self {
        let first_in = if blind { 3 } else { 4 };
        let block = |input, resize_to, layers| BlockSpec {
            input,
            resize_to,
            layers,
        };
        let blocks = match stage {
            Stage::S32 => {
                let mut layers = encoder(first_in, 24, [2, 2]);
                layers.extend(decoder(48, 24));
                vec![block(BlockInput::CorruptedAndMask, None, layers)]
            }
            Stage::S64 => vec![
                block(BlockInput::CorruptedAndMask, None, encoder(first_in, 24, [2, 2])),
                block(BlockInput::Prior(Stage::S32), None, encoder(3, 24, [2, 1])),
                block(BlockInput::Fusion, None, decoder(96, 24)),
            ],
            Stage::S128 => vec![
                block(BlockInput::CorruptedAndMask, None, encoder(first_in, 28, [2, 2])),
                block(BlockInput::Prior(Stage::S64), None, encoder(3, 28, [2, 1])),
                block(BlockInput::Prior(Stage::S32), None, encoder(3, 28, [1, 1])),
                block(BlockInput::Fusion, None, decoder(168, 28)),
            ],
            Stage::S256 => vec![
                block(BlockInput::CorruptedAndMask, None, encoder(first_in, 28, [2, 2])),
                block(BlockInput::Prior(Stage::S128), None, encoder(3, 28, [2, 1])),
                block(BlockInput::Prior(Stage::S64), None, encoder(3, 28, [1, 1])),
                block(BlockInput::Prior(Stage::S32), Some(64), encoder(3, 28, [1, 1])),
                block(BlockInput::Fusion, None, decoder(224, 28)),
            ],
        };
        Self { stage, blind, blocks }
    }

    fn input_channels(&self, input: BlockInput) -> usize {
        match input {
            BlockInput::CorruptedAndMask if self.blind => 3,
            BlockInput::CorruptedAndMask => 4,
            BlockInput::Prior(_) => 3,
            BlockInput::Fusion => 0,
        }
    }

    /// Propagates shapes through every block and returns, per block, the
    /// per-layer `(channels, size)` outputs. Fails on any channel or spatial
    /// mismatch.
    pub fn trace_shapes(&self) -> Result<Vec<Vec<(usize, usize)>>> {
        let n = self.stage.resolution();
        let mut traces = Vec::with_capacity(self.blocks.len());
        let mut branch_outputs: Vec<(usize, usize)> = Vec::new();
        let last = self.blocks.len() - 1;
        for (bi, block) in self.blocks.iter().enumerate() {
            let (mut ch, mut size) = match block.input {
                BlockInput::CorruptedAndMask => (self.input_channels(block.input), n),
                BlockInput::Prior(stage) => {
                    if stage >= self.stage {
                        return Err(Error::Construction(format!(
                            "stage {} cannot consume its own or a higher stage {stage}",
                            self.stage
                        )));
                    }
                    (3, stage.resolution())
                }
                BlockInput::Fusion => {
                    let size = branch_outputs
                        .first()
                        .map(|o| o.1)
                        .ok_or_else(|| Error::Construction("fusion block without branches".into()))?;
                    if let Some(bad) = branch_outputs.iter().find(|o| o.1 != size) {
                        return Err(Error::Construction(format!(
                            "cannot concatenate branch outputs of size {size} and {}",
                            bad.1
                        )));
                    }
                    (branch_outputs.iter().map(|o| o.0).sum(), size)
                }
            };
            if let Some(r) = block.resize_to {
                size = r;
            }
            let mut trace = Vec::with_capacity(block.layers.len());
            for layer in &block.layers {
                layer.validate()?;
                if layer.in_ch != ch {
                    return Err(Error::Construction(format!(
                        "stage {} block {bi}: layer expects {} channels, receives {ch}",
                        self.stage, layer.in_ch
                    )));
                }
                size = layer.output_size(size)?;
                ch = layer.out_ch;
                trace.push((ch, size));
            }
            if bi == last {
                if (ch, size) != (3, n) {
                    return Err(Error::Construction(format!(
                        "stage {} produces {ch}x{size}x{size}, expected 3x{n}x{n}",
                        self.stage
                    )));
                }
                if block.layers.last().map(|l| l.activation) != Some(Activation::Tanh) {
                    return Err(Error::Construction("final generator layer must be tanh".into()));
                }
            } else {
                branch_outputs.push((ch, size));
            }
            traces.push(trace);
        }
        Ok(traces)
    }
}

impl DiscriminatorSpec {
    pub fn standard(stage: Stage) -> Self {
        let n = match stage {
            Stage::S32 | Stage::S64 => 24,
            Stage::S128 | Stage::S256 => 28,
        };
        let lrelu = Activation::LeakyRelu(0.2);
        let layers = vec![
            LayerSpec::conv(3, n, 4, 2, lrelu).spectral(),
            LayerSpec::conv(n, 2 * n, 4, 2, lrelu).spectral(),
            LayerSpec::conv(2 * n, 4 * n, 4, 2, lrelu).spectral(),
            LayerSpec::conv(4 * n, 1, 4, 1, Activation::None).spectral(),
        ];
        Self {
            stage,
            base_width: n,
            layers,
        }
    }

    /// Output score-map size for an input of the stage resolution.
    pub fn output_size(&self) -> Result<usize> {
        self.layers
            .iter()
            .try_fold(self.stage.resolution(), |s, l| l.output_size(s))
    }
}

pub const NETWORK_MANIFEST_FORMAT: &str = "texgan-network";
pub const NETWORK_MANIFEST_VERSION: u32 = 1;

/// Versioned JSON manifest of a full model: four generators and four
/// discriminators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub format: String,
    pub version: u32,
    pub generators: Vec<GeneratorSpec>,
    pub discriminators: Vec<DiscriminatorSpec>,
}

impl NetworkSpec {
    pub fn standard(blind: bool) -> Self {
        Self {
            format: NETWORK_MANIFEST_FORMAT.into(),
            version: NETWORK_MANIFEST_VERSION,
            generators: Stage::ALL.iter().map(|&s| GeneratorSpec::standard(s, blind)).collect(),
            discriminators: Stage::ALL.iter().map(|&s| DiscriminatorSpec::standard(s)).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != NETWORK_MANIFEST_FORMAT {
            return Err(Error::Config(format!("unknown manifest format {:?}", self.format)));
        }
        if self.version != NETWORK_MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest version {} (expected {NETWORK_MANIFEST_VERSION})",
                self.version
            )));
        }
        for g in &self.generators {
            g.trace_shapes()?;
        }
        for d in &self.discriminators {
            for l in &d.layers {
                l.validate()?;
            }
            d.output_size()?;
        }
        Ok(())
    }

    pub fn generator(&self, stage: Stage) -> Result<&GeneratorSpec> {
        self.generators
            .iter()
            .find(|g| g.stage == stage)
            .ok_or_else(|| Error::Config(format!("manifest has no generator for stage {stage}")))
    }

    pub fn discriminator(&self, stage: Stage) -> Result<&DiscriminatorSpec> {
        self.discriminators
            .iter()
            .find(|d| d.stage == stage)
            .ok_or_else(|| Error::Config(format!("manifest has no discriminator for stage {stage}")))
    }
}
