//! Progressive freeze-and-grow training, configuration and checkpoints.
//!
//! Stages are trained in ascending order. While one stage trains, the
//! generators below it only run forward to provide priors, and every other
//! network and optimiser state is left untouched. All randomness of a step
//! (batch order, masks, flips) is derived from `(seed, stage, step)`, so a
//! checkpoint's stage cursor is enough to resume bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Graph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lbp::LbpConfig;
use crate::losses::{overall_loss, texture_loss_node, LossWeights, StageLosses};
use crate::masks::{gen_block, gen_freeform, gen_outpaint, Mask, MaskBin};
use crate::metrics::psnr_in_holes;
use crate::nets::{
    forward_pyramid, stage_inputs, Discriminator, Generator, GeneratorInputs, InitScheme, NetworkSpec, Stage, BASE_RESOLUTION,
};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

/// Where training masks come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskSource {
    /// Free-form strokes; each sample picks one of `bins` uniformly.
    FreeForm { bins: Vec<MaskBin> },
    Block,
    Outpaint,
}

impl Default for MaskSource {
    fn default() -> Self {
        MaskSource::FreeForm {
            bins: MaskBin::RANGED.to_vec(),
        }
    }
}

impl MaskSource {
    pub fn validate(&self) -> Result<()> {
        if let MaskSource::FreeForm { bins } = self {
            if bins.is_empty() || bins.contains(&MaskBin::Other) {
                return Err(Error::Config("free-form mask bins must be a non-empty list of ranged bins".into()));
            }
        }
        Ok(())
    }

    pub fn sample(&self, height: usize, width: usize, seed: u64) -> Result<Mask> {
        match self {
            MaskSource::FreeForm { bins } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let bin = bins[rng.random_range(0..bins.len())];
                gen_freeform(height, width, bin, rng.random())
            }
            MaskSource::Block => gen_block(height, width, seed),
            MaskSource::Outpaint => gen_outpaint(height, width),
        }
    }
}

/// Stops a stage once the validation hole PSNR has not improved by
/// `min_delta` dB for `patience` consecutive evaluations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: u32,
    /// Evaluate every this many steps.
    pub every: u64,
    pub val_items: usize,
    #[serde(default)]
    pub min_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Resolutions to train, strictly ascending.
    pub stage_order: Vec<u32>,
    /// Epochs per stage, keyed by resolution.
    pub epochs_per_stage: BTreeMap<String, u64>,
    /// Exact step counts that override `epochs_per_stage`.
    pub steps_per_stage: BTreeMap<String, u64>,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weights: LossWeights,
    pub lbp: LbpConfig,
    pub mask: MaskSource,
    pub blind_mode: bool,
    /// Generator initialiser; discriminators always use N(0, 0.02).
    pub init: InitScheme,
    /// Random horizontal flips.
    pub hflip: bool,
    pub seed: u64,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage_order: vec![32, 64, 128, 256],
            epochs_per_stage: Stage::ALL.iter().map(|s| (s.resolution().to_string(), 10)).collect(),
            steps_per_stage: BTreeMap::new(),
            batch_size: 8,
            lr_g: 1e-4,
            lr_d: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.99,
            weights: LossWeights::default(),
            lbp: LbpConfig::default(),
            mask: MaskSource::default(),
            blind_mode: false,
            init: InitScheme::Normal,
            hflip: false,
            seed: 0,
            early_stop: None,
        }
    }
}

fn stage_key(key: &str) -> Result<Stage> {
    let n: usize = key
        .parse()
        .map_err(|_| Error::Config(format!("stage key {key:?} is not a resolution")))?;
    Stage::from_resolution(n)
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let stages = self.stages()?;
        if stages.is_empty() {
            return Err(Error::Config("stage_order is empty".into()));
        }
        if stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "stage_order must be strictly ascending, got {:?}",
                self.stage_order
            )));
        }
        for key in self.epochs_per_stage.keys().chain(self.steps_per_stage.keys()) {
            stage_key(key)?;
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.adam(self.lr_g).validate()?;
        self.adam(self.lr_d).validate()?;
        self.weights.validate()?;
        self.lbp.validate()?;
        self.mask.validate()?;
        if let Some(es) = &self.early_stop {
            if es.every == 0 || es.val_items == 0 {
                return Err(Error::Config("early_stop needs every >= 1 and val_items >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn stages(&self) -> Result<Vec<Stage>> {
        self.stage_order.iter().map(|&r| Stage::from_resolution(r as usize)).collect()
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }

    pub fn adam_g(&self) -> AdamConfig {
        self.adam(self.lr_g)
    }

    pub fn adam_d(&self) -> AdamConfig {
        self.adam(self.lr_d)
    }

    /// Sets an exact step count for one stage.
    pub fn with_steps(mut self, stage: Stage, steps: u64) -> Self {
        self.steps_per_stage.insert(stage.resolution().to_string(), steps);
        self
    }

    /// Number of optimisation steps for `stage` over a dataset of `len` items.
    pub fn steps_for(&self, stage: Stage, len: usize) -> u64 {
        let key = stage.resolution().to_string();
        if let Some(&s) = self.steps_per_stage.get(&key) {
            return s;
        }
        let epochs = self.epochs_per_stage.get(&key).copied().unwrap_or(1);
        let per_epoch = len.div_ceil(self.batch_size) as u64;
        epochs * per_epoch
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.toml` or `.json` file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Mixes a list of integers into one RNG seed (splitmix64 steps).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

const TAG_GENERATOR: u64 = 1;
const TAG_DISCRIMINATOR: u64 = 2;
const TAG_PERMUTATION: u64 = 3;
const TAG_ITEM: u64 = 4;
const TAG_VALIDATION: u64 = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageProgress {
    pub steps: u64,
    pub finished: bool,
    /// Best validation hole PSNR so far (early stopping only).
    pub best_val_psnr: Option<f64>,
    pub evals_since_best: u32,
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TEXGANCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_FORMAT: &str = "texgan-checkpoint";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config_hash: String,
    config: TrainConfig,
    network: NetworkSpec,
    progress: Vec<StageProgress>,
    /// Adam step counts per stage: `[generator, discriminator]`.
    adam_steps: Vec<[u64; 2]>,
    tensors: Vec<TensorEntry>,
}

/// Complete training state: all networks, optimiser moments, the stage
/// cursor and the configuration that produced them.
///
/// Binary layout: magic, `u32` version, `u64` manifest length, the JSON
/// manifest, then every tensor listed in the manifest as little-endian `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub config_hash: String,
    pub network: NetworkSpec,
    /// Indexed by [`Stage::index`].
    pub generators: Vec<Generator>,
    pub discriminators: Vec<Discriminator>,
    pub opt_g: Vec<Adam>,
    pub opt_d: Vec<Adam>,
    pub progress: [StageProgress; 4],
}

impl Checkpoint {
    fn skeleton(config: TrainConfig, network: NetworkSpec) -> Result<Self> {
        config.validate()?;
        network.validate()?;
        let mut generators = Vec::new();
        let mut discriminators = Vec::new();
        for &s in &Stage::ALL {
            let g = Generator::new(network.generator(s)?.clone())?;
            if g.spec.blind != config.blind_mode {
                return Err(Error::Config(format!(
                    "network blind flag {} disagrees with config blind_mode {}",
                    g.spec.blind, config.blind_mode
                )));
            }
            generators.push(g);
            discriminators.push(Discriminator::new(network.discriminator(s)?.clone())?);
        }
        let sizes = |p: Vec<&Tensor>| p.iter().map(|t| t.numel()).collect::<Vec<_>>();
        let opt_g = generators.iter().map(|g| Adam::new(config.adam_g(), &sizes(g.params()))).collect();
        let opt_d = discriminators.iter().map(|d| Adam::new(config.adam_d(), &sizes(d.params()))).collect();
        Ok(Self {
            config_hash: config.hash(),
            config,
            network,
            generators,
            discriminators,
            opt_g,
            opt_d,
            progress: Default::default(),
        })
    }

    /// Freshly initialised networks for every stage.
    pub fn new(config: TrainConfig) -> Result<Self> {
        let network = NetworkSpec::standard(config.blind_mode);
        let mut ck = Self::skeleton(config, network)?;
        let seed = ck.config.seed;
        for &s in &Stage::ALL {
            let i = s.index() as u64;
            ck.generators[s.index()].init_with(derive_seed(&[seed, TAG_GENERATOR, i]), ck.config.init);
            ck.discriminators[s.index()].init(derive_seed(&[seed, TAG_DISCRIMINATOR, i]));
        }
        Ok(ck)
    }

    /// Continues from this state under a different configuration, for
    /// example to branch one trained prefix into several ablation runs.
    pub fn fork(mut self, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.blind_mode != self.config.blind_mode {
            return Err(Error::Config("cannot fork across blind modes".into()));
        }
        for o in &mut self.opt_g {
            o.config = config.adam_g();
        }
        for o in &mut self.opt_d {
            o.config = config.adam_d();
        }
        self.config_hash = config.hash();
        self.config = config;
        Ok(self)
    }

    pub fn generator(&self, stage: Stage) -> &Generator {
        &self.generators[stage.index()]
    }

    pub fn discriminator(&self, stage: Stage) -> &Discriminator {
        &self.discriminators[stage.index()]
    }

    pub fn progress(&self, stage: Stage) -> &StageProgress {
        &self.progress[stage.index()]
    }

    /// Generator references in the layout [`forward_pyramid`] expects.
    pub fn generator_refs(&self) -> Vec<Option<&Generator>> {
        self.generators.iter().map(Some).collect()
    }

    fn buffers(&self) -> Vec<(String, &[f32])> {
        let mut out = Vec::new();
        for i in 0..Stage::ALL.len() {
            let (g, d) = (&self.generators[i], &self.discriminators[i]);
            let r = Stage::ALL[i].resolution();
            for (name, t) in g.param_names().into_iter().zip(g.params()) {
                out.push((name, t.data()));
            }
            for (name, t) in d.param_names().into_iter().zip(d.params()) {
                out.push((name, t.data()));
            }
            for (l, u) in d.sn_u.iter().enumerate() {
                out.push((format!("d{r}.l{l}.sn_u"), u.as_slice()));
            }
            for (tag, opt) in [("g", &self.opt_g[i]), ("d", &self.opt_d[i])] {
                for (k, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                    out.push((format!("adam.{tag}{r}.{k}.m"), m.as_slice()));
                    out.push((format!("adam.{tag}{r}.{k}.v"), v.as_slice()));
                }
            }
        }
        out
    }

    /// Mutable views in the order of [`Checkpoint::buffers`].
    fn buffers_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        let iter = self
            .generators
            .iter_mut()
            .zip(self.discriminators.iter_mut())
            .zip(self.opt_g.iter_mut().zip(self.opt_d.iter_mut()));
        for ((g, d), (og, od)) in iter {
            out.extend(g.params_mut().into_iter().map(|t| t.data_mut()));
            let Discriminator { layers, sn_u, .. } = d;
            out.extend(layers.iter_mut().map(|l| l.weight.data_mut()));
            out.extend(sn_u.iter_mut().map(Vec::as_mut_slice));
            for opt in [og, od] {
                for (m, v) in opt.m.iter_mut().zip(opt.v.iter_mut()) {
                    out.push(m.as_mut_slice());
                    out.push(v.as_mut_slice());
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let buffers = self.buffers();
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: self.config_hash.clone(),
            config: self.config.clone(),
            network: self.network.clone(),
            progress: self.progress.to_vec(),
            adam_steps: self.opt_g.iter().zip(&self.opt_d).map(|(g, d)| [g.step, d.step]).collect(),
            tensors: buffers
                .iter()
                .map(|(name, b)| TensorEntry {
                    name: name.clone(),
                    len: b.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let payload: usize = buffers.iter().map(|(_, b)| b.len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 4 * payload);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, b) in &buffers {
            for v in b.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(20..20 + mlen).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(json)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(bad("unknown checkpoint format"));
        }
        if manifest.config.hash() != manifest.config_hash {
            return Err(bad("config hash does not match the embedded config"));
        }
        if manifest.progress.len() != 4 || manifest.adam_steps.len() != 4 {
            return Err(bad("manifest must describe four stages"));
        }
        let mut ck = Self::skeleton(manifest.config, manifest.network)?;
        let expected: Vec<(String, usize)> = ck.buffers().iter().map(|(n, b)| (n.clone(), b.len())).collect();
        if expected.len() != manifest.tensors.len()
            || expected
                .iter()
                .zip(&manifest.tensors)
                .any(|((n, l), e)| *n != e.name || *l != e.len)
        {
            return Err(bad("tensor table does not match the network"));
        }
        let mut payload = &bytes[20 + mlen..];
        let total: usize = expected.iter().map(|(_, l)| l).sum();
        if payload.len() != 4 * total {
            return Err(Error::Checkpoint(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                4 * total
            )));
        }
        for buf in ck.buffers_mut() {
            let (head, rest) = payload.split_at(4 * buf.len());
            for (v, chunk) in buf.iter_mut().zip(head.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
            payload = rest;
        }
        for (i, p) in manifest.progress.into_iter().enumerate() {
            ck.progress[i] = p;
        }
        for (i, [g, d]) in manifest.adam_steps.into_iter().enumerate() {
            ck.opt_g[i].step = g;
            ck.opt_d[i].step = d;
        }
        Ok(ck)
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub stage: Stage,
    /// 1-based step within the stage.
    pub step: u64,
    pub losses: StageLosses,
}

pub const LOG_HEADER: &str = "step,stage,l_rec,l_adv,l_dis,l_texture";

impl LogRow {
    pub fn to_csv(&self) -> String {
        let l = &self.losses;
        let tex = l.l_texture.map(|t| t.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.stage.resolution(),
            l.l_rec,
            l.l_adv,
            l.l_dis,
            tex
        )
    }
}

/// How a call to [`Trainer::train_stage`] ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageOutcome {
    Completed { steps: u64 },
    EarlyStopped { steps: u64 },
    /// The step budget ran out before the stage finished.
    Interrupted { steps: u64 },
}

pub struct Trainer<'a> {
    ckpt: Checkpoint,
    data: &'a dyn Dataset,
    validation: Option<&'a dyn Dataset>,
    history: Vec<LogRow>,
    csv: Option<fs::File>,
    save_to: Option<(PathBuf, u64)>,
    budget: Option<u64>,
    permutation: Option<(Stage, u64, Vec<usize>)>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a dyn Dataset) -> Result<Self> {
        Ok(Self::from_checkpoint(Checkpoint::new(config)?, data))
    }

    /// Continues a checkpoint; `config` must hash to the checkpoint's hash.
    pub fn resume(ckpt: Checkpoint, config: &TrainConfig, data: &'a dyn Dataset) -> Result<Self> {
        let hash = config.hash();
        if hash != ckpt.config_hash {
            return Err(Error::Config(format!(
                "config hash {hash} does not match checkpoint hash {}",
                ckpt.config_hash
            )));
        }
        Ok(Self::from_checkpoint(ckpt, data))
    }

    fn from_checkpoint(ckpt: Checkpoint, data: &'a dyn Dataset) -> Self {
        Self {
            ckpt,
            data,
            validation: None,
            history: Vec::new(),
            csv: None,
            save_to: None,
            budget: None,
            permutation: None,
        }
    }

    /// Appends loss rows to a CSV file, writing the header if it is new.
    pub fn with_log(mut self, path: &Path) -> Result<Self> {
        let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
        if f.metadata()?.len() == 0 {
            writeln!(f, "{LOG_HEADER}")?;
        }
        self.csv = Some(f);
        Ok(self)
    }

    /// Saves the checkpoint every `every` steps and at the end of each stage.
    pub fn with_checkpoint_path(mut self, path: &Path, every: u64) -> Self {
        self.save_to = Some((path.to_path_buf(), every.max(1)));
        self
    }

    /// Images used for early stopping; defaults to the training set.
    pub fn with_validation(mut self, data: &'a dyn Dataset) -> Self {
        self.validation = Some(data);
        self
    }

    /// Runs at most `steps` more optimisation steps.
    pub fn set_step_budget(&mut self, steps: Option<u64>) {
        self.budget = steps;
    }

    pub fn config(&self) -> &TrainConfig {
        &self.ckpt.config
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ckpt
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.ckpt
    }

    pub fn history(&self) -> &[LogRow] {
        &self.history
    }

    /// Trains every configured stage that is not finished yet. Returns
    /// `false` if the step budget ran out first.
    pub fn train_all(&mut self) -> Result<bool> {
        for stage in self.config().stages()? {
            if self.ckpt.progress(stage).finished {
                continue;
            }
            if let StageOutcome::Interrupted { .. } = self.train_stage(stage)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn train_stage(&mut self, stage: Stage) -> Result<StageOutcome> {
        for &lower in stage.lower() {
            if !self.ckpt.progress(lower).finished {
                return Err(Error::State(format!(
                    "stage {stage} needs a trained stage {lower} first"
                )));
            }
        }
        if self.data.is_empty() {
            return Err(Error::State("training dataset is empty".into()));
        }
        let total = self.config().steps_for(stage, self.data.len());
        let mut ran = 0;
        let mut early = false;
        while self.ckpt.progress(stage).steps < total {
            if self.budget == Some(0) {
                return Ok(StageOutcome::Interrupted { steps: ran });
            }
            self.step(stage)?;
            ran += 1;
            if let Some(b) = self.budget.as_mut() {
                *b -= 1;
            }
            let done = self.ckpt.progress(stage).steps;
            if let Some((path, every)) = &self.save_to {
                if done % every == 0 && done < total {
                    self.ckpt.save(path)?;
                }
            }
            if self.early_stop_check(stage)? {
                early = true;
                break;
            }
        }
        self.ckpt.progress[stage.index()].finished = true;
        if let Some((path, _)) = &self.save_to {
            self.ckpt.save(path)?;
        }
        Ok(if early {
            StageOutcome::EarlyStopped { steps: ran }
        } else {
            StageOutcome::Completed { steps: ran }
        })
    }

    fn permutation(&mut self, stage: Stage, epoch: u64) -> &[usize] {
        let stale = !matches!(&self.permutation, Some((s, e, _)) if *s == stage && *e == epoch);
        if stale {
            let mut idx: Vec<usize> = (0..self.data.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                self.ckpt.config.seed,
                TAG_PERMUTATION,
                stage.index() as u64,
                epoch,
            ]));
            idx.shuffle(&mut rng);
            self.permutation = Some((stage, epoch, idx));
        }
        &self.permutation.as_ref().expect("just filled").2
    }

    /// Images `[b, 3, 256, 256]` and masks `[b, 1, 256, 256]` for a step.
    pub fn batch(&mut self, stage: Stage, step: u64) -> Result<(Tensor, Tensor)> {
        let b = self.ckpt.config.batch_size as u64;
        let n = self.data.len() as u64;
        let mut images = Vec::with_capacity(b as usize);
        let mut masks = Vec::with_capacity(b as usize);
        for j in 0..b {
            let k = step * b + j;
            let idx = self.permutation(stage, k / n)[(k % n) as usize];
            let mut img = self.data.get(idx)?;
            img.ensure_shape([1, 3, BASE_RESOLUTION, BASE_RESOLUTION])?;
            let cfg = &self.ckpt.config;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, TAG_ITEM, stage.index() as u64, step, j]));
            if cfg.hflip && rng.random::<bool>() {
                img = hflip(&img);
            }
            images.push(img);
            masks.push(cfg.mask.sample(BASE_RESOLUTION, BASE_RESOLUTION, rng.random())?.to_tensor());
        }
        Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
    }

    /// One discriminator update followed by one generator update.
    pub fn step(&mut self, stage: Stage) -> Result<StageLosses> {
        let step = self.ckpt.progress(stage).steps;
        let (images, masks) = self.batch(stage, step)?;
        let losses = self.step_on_batch(stage, &images, &masks)?;
        self.ckpt.progress[stage.index()].steps += 1;
        let row = LogRow {
            stage,
            step: step + 1,
            losses,
        };
        if let Some(f) = self.csv.as_mut() {
            writeln!(f, "{}", row.to_csv())?;
        }
        self.history.push(row);
        Ok(losses)
    }

    /// D-step then G-step of `stage` on an explicit batch.
    pub fn step_on_batch(&mut self, stage: Stage, images: &Tensor, masks: &Tensor) -> Result<StageLosses> {
        let i = stage.index();
        let r = stage.resolution();
        let step = self.ckpt.progress(stage).steps + 1;
        let non_finite = |what: &str, v: f32| -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::NonFiniteLoss {
                    stage: r as u32,
                    step,
                    detail: format!("{what} = {v}"),
                })
            }
        };
        let corrupted = images.mul_broadcast_channels(masks)?;
        let priors = match stage.lower().last() {
            Some(&below) => forward_pyramid(&corrupted, masks, below, &self.ckpt.generator_refs())?.outputs,
            None => Default::default(),
        };
        let (image_r, mask_r) = stage_inputs(&corrupted, masks, stage)?;
        let target_r = if r == BASE_RESOLUTION {
            images.clone()
        } else {
            images.downsample_area(BASE_RESOLUTION / r)?
        };
        let inputs = GeneratorInputs {
            corrupted: &image_r,
            mask: &mask_r,
            priors: &priors,
        };

        // discriminator
        let fake = self.ckpt.generators[i].infer(&inputs)?;
        let mut g = Graph::new();
        let d = &mut self.ckpt.discriminators[i];
        let bound = d.bind(&mut g, true)?;
        let real_x = g.input(target_r.clone());
        let fake_x = g.input(fake);
        let real_s = d.apply(&mut g, &bound, real_x)?;
        let fake_s = d.apply(&mut g, &bound, fake_x)?;
        let real_l = g.squared_error_mean(real_s, 1.0);
        let fake_l = g.squared_error_mean(fake_s, 0.0);
        let dis = g.weighted_sum(&[(real_l, 1.0), (fake_l, 1.0)])?;
        let l_dis = g.value(dis).data()[0];
        non_finite("l_dis", l_dis)?;
        let mut grads = g.backward(dis)?;
        let d_grads: Vec<Option<Tensor>> = bound.raw.iter().map(|&v| grads.take(v)).collect();
        self.ckpt.opt_d[i].step(&mut d.params_mut(), &d_grads)?;

        // generator
        let cfg = &self.ckpt.config;
        let w = cfg.weights;
        let gen = &self.ckpt.generators[i];
        let mut g = Graph::new();
        let params = gen.bind(&mut g, true);
        let out = gen.apply(&mut g, &params, &inputs)?;
        let target = g.input(target_r);
        let rec = g.l1_mean(out, target)?;
        let d = &self.ckpt.discriminators[i];
        let frozen = d.bind_frozen(&mut g);
        let scores = d.apply(&mut g, &frozen, out)?;
        let adv = g.squared_error_mean(scores, 1.0);
        let mut terms = vec![(rec, w.rec), (adv, w.adv)];
        let mut l_texture = None;
        if stage == Stage::S256 && w.texture > 0.0 {
            let tex = texture_loss_node(&mut g, out, images, &cfg.lbp)?;
            l_texture = Some(g.value(tex).data()[0]);
            terms.push((tex, w.texture));
        }
        let total = g.weighted_sum(&terms)?;
        let mut losses = StageLosses {
            l_rec: g.value(rec).data()[0],
            l_adv: g.value(adv).data()[0],
            l_dis,
            l_texture,
            l_overall: 0.0,
        };
        losses.l_overall = overall_loss(stage, &losses, &w)?;
        non_finite("l_rec", losses.l_rec)?;
        non_finite("l_adv", losses.l_adv)?;
        if let Some(t) = l_texture {
            non_finite("l_texture", t)?;
        }
        non_finite("l_overall", g.value(total).data()[0])?;
        let mut grads = g.backward(total)?;
        let g_grads: Vec<Option<Tensor>> = params.iter().map(|&v| grads.take(v)).collect();
        let gen = &mut self.ckpt.generators[i];
        self.ckpt.opt_g[i].step(&mut gen.params_mut(), &g_grads)?;
        Ok(losses)
    }

    /// Mean hole PSNR of the pyramid up to `stage` on the validation items.
    pub fn validate(&self, stage: Stage, items: usize) -> Result<f64> {
        let data = self.validation.unwrap_or(self.data);
        let count = items.min(data.len());
        if count == 0 {
            return Err(Error::State("validation set is empty".into()));
        }
        let r = stage.resolution();
        let mut total = 0.0;
        for idx in 0..count {
            let img = data.get(idx)?;
            let seed = derive_seed(&[self.ckpt.config.seed, TAG_VALIDATION, idx as u64]);
            let mask = self.ckpt.config.mask.sample(BASE_RESOLUTION, BASE_RESOLUTION, seed)?;
            let m = mask.to_tensor();
            let corrupted = img.mul_broadcast_channels(&m)?;
            let out = forward_pyramid(&corrupted, &m, stage, &self.ckpt.generator_refs())?;
            let target = if r == BASE_RESOLUTION {
                img
            } else {
                img.downsample_area(BASE_RESOLUTION / r)?
            };
            let unit = |t: &Tensor| crate::metrics::to_unit_range(t);
            let pred = out.get(stage).expect("pyramid evaluated this stage");
            let p = psnr_in_holes(&unit(pred), &unit(&target), &mask.resize_nearest(r, r));
            // a fully known downsampled mask has no holes to score
            total += match p {
                Ok(v) => v.min(100.0),
                Err(Error::UndefinedMetric(_)) => 100.0,
                Err(e) => return Err(e),
            };
        }
        Ok(total / count as f64)
    }

    fn early_stop_check(&mut self, stage: Stage) -> Result<bool> {
        let Some(es) = self.ckpt.config.early_stop else {
            return Ok(false);
        };
        let steps = self.ckpt.progress(stage).steps;
        if steps % es.every != 0 {
            return Ok(false);
        }
        let psnr = self.validate(stage, es.val_items)?;
        let p = &mut self.ckpt.progress[stage.index()];
        match p.best_val_psnr {
            Some(best) if psnr <= best + es.min_delta => p.evals_since_best += 1,
            _ => {
                p.best_val_psnr = Some(psnr);
                p.evals_since_best = 0;
            }
        }
        log::info!("stage {stage} step {steps}: validation hole PSNR {psnr:.3} dB");
        Ok(p.evals_since_best >= es.patience)
    }
}

fn hflip(t: &Tensor) -> Tensor {
    let [n, c, h, w] = t.shape();
    Tensor::from_fn([n, c, h, w], |b, ch, y, x| t.at(b, ch, y, w - 1 - x))
}

/// Trains one stage of `ckpt` to completion under `config`.
pub fn train_stage(stage: Stage, config: &TrainConfig, ckpt: Checkpoint, data: &dyn Dataset) -> Result<Checkpoint> {
    let mut t = Trainer::resume(ckpt, config, data)?;
    t.train_stage(stage)?;
    Ok(t.into_checkpoint())
}

/// Trains every configured stage from scratch.
pub fn train_all(config: TrainConfig, data: &dyn Dataset) -> Result<Checkpoint> {
    config.validate()?;
    let mut t = Trainer::new(config, data)?;
    t.train_all()?;
    Ok(t.into_checkpoint())
}
