//! Parameterised generators and discriminators built from their specs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{ConvKind, Graph, Var};
use crate::error::{Error, Result};
use crate::nets::spec::{BlockInput, DiscriminatorSpec, GeneratorSpec, LayerKind, LayerSpec, Stage};
use crate::tensor::Tensor;

/// Standard deviation of the Gaussian weight initialiser.
pub const INIT_STD: f64 = 0.02;

/// Generator weight initialiser.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// N(0, [`INIT_STD`]) for every layer.
    #[default]
    Normal,
    /// N(0, sqrt(2 / fan_in)) per layer.
    He,
}

impl InitScheme {
    fn std(self, spec: &LayerSpec) -> f64 {
        match self {
            InitScheme::Normal => INIT_STD,
            InitScheme::He => {
                let taps = (spec.kernel * spec.kernel) as f64;
                let fan_in = match spec.kind {
                    LayerKind::Conv => spec.in_ch as f64 * taps,
                    LayerKind::TransposedConv => spec.in_ch as f64 * taps / (spec.stride * spec.stride) as f64,
                };
                (2.0 / fan_in).sqrt()
            }
        }
    }
}

/// Power iterations used to seed a fresh spectral-norm vector.
pub const SPECTRAL_WARMUP_ITERS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub spec: LayerSpec,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl ConvLayer {
    pub fn zeros(spec: LayerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            weight: Tensor::zeros(spec.weight_shape()),
            bias: spec.bias.then(|| Tensor::zeros([1, spec.out_ch, 1, 1])),
            spec,
        })
    }

    fn kind(&self) -> ConvKind {
        match self.spec.kind {
            LayerKind::Conv => ConvKind::Conv,
            LayerKind::TransposedConv => ConvKind::Transposed,
        }
    }
}

/// Fills every weight with N(0, std) and zeroes every bias.
pub fn init_weights<'a>(layers: impl IntoIterator<Item = &'a mut ConvLayer>, std: f64, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0f64, std).expect("std is positive");
    for layer in layers {
        layer
            .weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = normal.sample(rng) as f32);
        if let Some(b) = &mut layer.bias {
            b.data_mut().fill(0.0);
        }
    }
}

/// Inputs to one generator, already at the generator's resolution.
pub struct GeneratorInputs<'a> {
    /// `I ⊙ M`, shape `[n, 3, r, r]`.
    pub corrupted: &'a Tensor,
    /// Shape `[n, 1, r, r]`; ignored in blind mode.
    pub mask: &'a Tensor,
    /// Outputs of the lower stages, indexed by [`Stage::index`].
    pub priors: &'a [Option<Tensor>],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub blocks: Vec<Vec<ConvLayer>>,
}

impl Generator {
    /// Builds a generator with zero weights; call [`Generator::init`] next.
    pub fn new(spec: GeneratorSpec) -> Result<Self> {
        spec.trace_shapes()?;
        let blocks = spec
            .blocks
            .iter()
            .map(|b| b.layers.iter().map(|&l| ConvLayer::zeros(l)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, blocks })
    }

    pub fn standard(stage: Stage, blind: bool, seed: u64) -> Result<Self> {
        let mut g = Self::new(GeneratorSpec::standard(stage, blind))?;
        g.init(seed);
        Ok(g)
    }

    pub fn init(&mut self, seed: u64) {
        self.init_with(seed, InitScheme::Normal);
    }

    pub fn init_with(&mut self, seed: u64, scheme: InitScheme) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in self.blocks.iter_mut().flatten() {
            let std = scheme.std(&layer.spec);
            init_weights(std::iter::once(layer), std, &mut rng);
        }
    }

    pub fn stage(&self) -> Stage {
        self.spec.stage
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.blocks.iter().flatten()
    }

    /// Parameter tensors in a fixed order (weight, then bias, per layer).
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers()
            .flat_map(|l| std::iter::once(&l.weight).chain(l.bias.as_ref()))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.blocks
            .iter_mut()
            .flatten()
            .flat_map(|l| std::iter::once(&mut l.weight).chain(l.bias.as_mut()))
            .collect()
    }

    /// Names aligned with [`Generator::params`].
    pub fn param_names(&self) -> Vec<String> {
        let prefix = format!("g{}", self.stage().resolution());
        named_params(&prefix, &self.blocks)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Places the parameters on the tape.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|t| graph.leaf(t.clone(), trainable))
            .collect()
    }

    /// Runs the generator on the tape using parameters from [`Generator::bind`].
    pub fn apply(&self, graph: &mut Graph, params: &[Var], inputs: &GeneratorInputs) -> Result<Var> {
        let n = self.stage().resolution();
        let batch = inputs.corrupted.batch();
        inputs.corrupted.ensure_shape([batch, 3, n, n])?;
        let mut cursor = 0usize;
        let mut branch_outputs = Vec::new();
        let last = self.blocks.len() - 1;
        let mut output = None;
        for (bi, (block_spec, layers)) in self.spec.blocks.iter().zip(&self.blocks).enumerate() {
            let mut x = match block_spec.input {
                BlockInput::CorruptedAndMask => {
                    if self.spec.blind {
                        graph.input(inputs.corrupted.clone())
                    } else {
                        inputs.mask.ensure_shape([batch, 1, n, n])?;
                        graph.input(Tensor::concat_channels(&[inputs.corrupted, inputs.mask])?)
                    }
                }
                BlockInput::Prior(stage) => {
                    let prior = inputs
                        .priors
                        .get(stage.index())
                        .and_then(Option::as_ref)
                        .ok_or_else(|| {
                            Error::State(format!("generator {n} needs the stage-{stage} output"))
                        })?;
                    let r = stage.resolution();
                    prior.ensure_shape([batch, 3, r, r])?;
                    let prior = match block_spec.resize_to {
                        Some(size) if size != r => prior.resize_bilinear(size, size),
                        _ => prior.clone(),
                    };
                    graph.input(prior)
                }
                BlockInput::Fusion => graph.concat(&branch_outputs)?,
            };
            for layer in layers {
                let w = params[cursor];
                let b = layer.bias.as_ref().map(|_| params[cursor + 1]);
                cursor += 1 + usize::from(b.is_some());
                x = graph.conv(layer.kind(), x, w, b, layer.spec.stride, layer.spec.padding, layer.spec.activation)?;
            }
            if bi == last {
                output = Some(x);
            } else {
                branch_outputs.push(x);
            }
        }
        output.ok_or_else(|| Error::Construction("generator has no blocks".into()))
    }

    /// Gradient-free forward pass.
    pub fn infer(&self, inputs: &GeneratorInputs) -> Result<Tensor> {
        let mut graph = Graph::new();
        let params = self.bind(&mut graph, false);
        let out = self.apply(&mut graph, &params, inputs)?;
        Ok(graph.take_value(out))
    }
}

fn named_params(prefix: &str, blocks: &[Vec<ConvLayer>]) -> Vec<String> {
    let mut names = Vec::new();
    for (bi, block) in blocks.iter().enumerate() {
        for (li, layer) in block.iter().enumerate() {
            names.push(format!("{prefix}.b{bi}.l{li}.weight"));
            if layer.bias.is_some() {
                names.push(format!("{prefix}.b{bi}.l{li}.bias"));
            }
        }
    }
    names
}

/// PatchGAN discriminator with spectrally normalised convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    pub layers: Vec<ConvLayer>,
    /// Left singular-vector estimate per layer, carried across steps.
    pub sn_u: Vec<Vec<f32>>,
}

/// Discriminator parameters placed on a tape.
pub struct BoundDiscriminator {
    /// Raw weights; gradients are read from these.
    pub raw: Vec<Var>,
    /// Spectrally normalised weights used by the convolutions.
    normalized: Vec<Var>,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec) -> Result<Self> {
        spec.output_size()?;
        let layers = spec
            .layers
            .iter()
            .map(|&l| ConvLayer::zeros(l))
            .collect::<Result<Vec<_>>>()?;
        let sn_u = layers.iter().map(|l| vec![0.0; l.spec.out_ch]).collect();
        Ok(Self { spec, layers, sn_u })
    }

    pub fn standard(stage: Stage, seed: u64) -> Result<Self> {
        let mut d = Self::new(DiscriminatorSpec::standard(stage))?;
        d.init(seed);
        Ok(d)
    }

    /// Gaussian weights, then a fresh unit `u` refined by power iteration.
    pub fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_weights(self.layers.iter_mut(), INIT_STD, &mut rng);
        let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
        for (layer, u) in self.layers.iter().zip(&mut self.sn_u) {
            u.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            let rows = layer.spec.out_ch;
            let cols = layer.weight.numel() / rows;
            *u = crate::autograd::power_iteration(layer.weight.data(), rows, cols, u, SPECTRAL_WARMUP_ITERS).0;
        }
    }

    pub fn stage(&self) -> Stage {
        self.spec.stage
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().map(|l| &l.weight).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().map(|l| &mut l.weight).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let prefix = format!("d{}", self.stage().resolution());
        (0..self.layers.len()).map(|i| format!("{prefix}.l{i}.weight")).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Binds the weights and runs one power iteration per layer, updating
    /// the stored singular vectors.
    pub fn bind(&mut self, graph: &mut Graph, trainable: bool) -> Result<BoundDiscriminator> {
        let mut raw = Vec::with_capacity(self.layers.len());
        let mut normalized = Vec::with_capacity(self.layers.len());
        for (layer, u) in self.layers.iter().zip(self.sn_u.iter_mut()) {
            let w = graph.leaf(layer.weight.clone(), trainable);
            let (wn, new_u) = graph.spectral_norm(w, u, 1)?;
            *u = new_u;
            raw.push(w);
            normalized.push(wn);
        }
        Ok(BoundDiscriminator { raw, normalized })
    }

    /// Binds the current normalised weights as constants; `sn_u` is left
    /// untouched. Gradients still flow to the scored input.
    pub fn bind_frozen(&self, graph: &mut Graph) -> BoundDiscriminator {
        let normalized: Vec<Var> = self.normalized_weights().into_iter().map(|w| graph.input(w)).collect();
        BoundDiscriminator {
            raw: normalized.clone(),
            normalized,
        }
    }

    /// Patch score map for a batch of images at the stage resolution.
    pub fn apply(&self, graph: &mut Graph, bound: &BoundDiscriminator, x: Var) -> Result<Var> {
        let n = self.stage().resolution();
        let [batch, ..] = graph.value(x).shape();
        graph.value(x).ensure_shape([batch, 3, n, n])?;
        let mut x = x;
        for (layer, &w) in self.layers.iter().zip(&bound.normalized) {
            x = graph.conv(ConvKind::Conv, x, w, None, layer.spec.stride, layer.spec.padding, layer.spec.activation)?;
        }
        Ok(x)
    }

    /// Weights divided by their current spectral-norm estimate.
    pub fn normalized_weights(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .zip(&self.sn_u)
            .map(|(l, u)| {
                let rows = l.spec.out_ch;
                let cols = l.weight.numel() / rows;
                let (_, _, sigma) = crate::autograd::power_iteration(l.weight.data(), rows, cols, u, 1);
                l.weight.map(|w| w / sigma)
            })
            .collect()
    }

    /// Scores without recording gradients and without touching `sn_u`.
    pub fn score(&self, images: &Tensor) -> Result<Tensor> {
        let mut graph = Graph::new();
        let x = graph.input(images.clone());
        let mut x = x;
        for (layer, w) in self.layers.iter().zip(self.normalized_weights()) {
            let w = graph.input(w);
            x = graph.conv(ConvKind::Conv, x, w, None, layer.spec.stride, layer.spec.padding, layer.spec.activation)?;
        }
        Ok(graph.take_value(x))
    }
}
