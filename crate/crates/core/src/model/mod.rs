//! A small LLaMA-style decoder: token plus learned position embeddings,
//! `n_layers` blocks of pre-norm causal self-attention and a SwiGLU MLP,
//! then a final RMS norm and the `lm_head` projection. No biases, no norm
//! gains. Every linear map has a name so adapters can be attached to it.
//!
//! Activations are kept as `d_model x seq` matrices, one column per token.

mod checkpoint;
mod decoder;
mod tokenizer;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use decoder::Decoder;
pub use tokenizer::{pretokenize, Tokenizer, BOS, EOD, PAD, UNK};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::CodecError;
use crate::lora::{lora_on_tape, AdapterVars, LoraAdapter, LoraConfig, LoraError};
use crate::quant::{dequantize, quantize_blockwise, BitWidth, QuantError, QuantizedMatrix};
use crate::tensor::{Matrix, Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error(
        "sequence of {len} tokens exceeds max_seq_len {max}; \
         training examples must fit the 1500 or 2000 token budget"
    )]
    SequenceTooLong { len: usize, max: usize },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("unknown projection {0:?}")]
    UnknownProjection(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Lora(#[from] LoraError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// The eight adaptable linear maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    QProj,
    KProj,
    VProj,
    OProj,
    GateProj,
    UpProj,
    DownProj,
    LmHead,
}

impl Projection {
    pub const ALL: [Projection; 8] = [
        Projection::QProj,
        Projection::KProj,
        Projection::VProj,
        Projection::OProj,
        Projection::GateProj,
        Projection::UpProj,
        Projection::DownProj,
        Projection::LmHead,
    ];

    /// The seven projections that live inside each block.
    pub const PER_LAYER: [Projection; 7] = [
        Projection::QProj,
        Projection::KProj,
        Projection::VProj,
        Projection::OProj,
        Projection::GateProj,
        Projection::UpProj,
        Projection::DownProj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Projection::QProj => "q_proj",
            Projection::KProj => "k_proj",
            Projection::VProj => "v_proj",
            Projection::OProj => "o_proj",
            Projection::GateProj => "gate_proj",
            Projection::UpProj => "up_proj",
            Projection::DownProj => "down_proj",
            Projection::LmHead => "lm_head",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }

    /// `(out, in)` shape of the weight.
    pub fn shape(self, config: &ModelConfig) -> (usize, usize) {
        let d = config.d_model;
        match self {
            Projection::QProj | Projection::KProj | Projection::VProj | Projection::OProj => (d, d),
            Projection::GateProj | Projection::UpProj => (config.d_ff, d),
            Projection::DownProj => (d, config.d_ff),
            Projection::LmHead => (config.vocab_size, d),
        }
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Projection {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Projection::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ModelError::UnknownProjection(s.to_string()))
    }
}

/// One concrete weight: a per-layer projection or the output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProjectionId {
    pub layer: Option<usize>,
    pub proj: Projection,
}

impl ProjectionId {
    pub fn layer(layer: usize, proj: Projection) -> Self {
        Self {
            layer: Some(layer),
            proj,
        }
    }

    pub fn head() -> Self {
        Self {
            layer: None,
            proj: Projection::LmHead,
        }
    }
}

impl fmt::Display for ProjectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer {
            Some(l) => write!(f, "layers.{l}.{}", self.proj),
            None => write!(f, "{}", self.proj),
        }
    }
}

impl FromStr for ProjectionId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::UnknownProjection(s.to_string());
        if s == "lm_head" {
            return Ok(Self::head());
        }
        let rest = s.strip_prefix("layers.").ok_or_else(bad)?;
        let (layer, proj) = rest.split_once('.').ok_or_else(bad)?;
        let proj: Projection = proj.parse()?;
        if proj == Projection::LmHead {
            return Err(bad());
        }
        Ok(Self::layer(layer.parse().map_err(|_| bad())?, proj))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub lora_targets: BTreeSet<Projection>,
    pub lora: LoraConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            d_ff: 128,
            max_seq_len: 2048,
            lora_targets: Projection::ALL.into_iter().collect(),
            lora: LoraConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size <= PAD {
            return bad(format!(
                "vocab_size {} cannot hold the special tokens",
                self.vocab_size
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Every weight an adapter would attach to under `lora_targets`.
    pub fn adapter_sites(&self) -> Vec<ProjectionId> {
        let mut out = Vec::new();
        for l in 0..self.n_layers {
            for p in Projection::PER_LAYER {
                if self.lora_targets.contains(&p) {
                    out.push(ProjectionId::layer(l, p));
                }
            }
        }
        if self.lora_targets.contains(&Projection::LmHead) {
            out.push(ProjectionId::head());
        }
        out
    }

    /// Parses a list of projection names.
    pub fn parse_targets<S: AsRef<str>>(names: &[S]) -> Result<BTreeSet<Projection>, ModelError> {
        names.iter().map(|n| n.as_ref().trim().parse()).collect()
    }
}

/// A frozen linear weight, optionally stored quantized. Quantized weights
/// keep a dequantized copy for computation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenLinear {
    weight: Matrix,
    quantized: Option<QuantizedMatrix>,
}

impl FrozenLinear {
    pub fn dense(weight: Matrix) -> Self {
        Self {
            weight,
            quantized: None,
        }
    }

    pub fn from_quantized(q: QuantizedMatrix) -> Self {
        Self {
            weight: dequantize(&q),
            quantized: Some(q),
        }
    }

    /// The weight used in the forward pass.
    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn quantized(&self) -> Option<&QuantizedMatrix> {
        self.quantized.as_ref()
    }

    /// Bytes needed to store this weight.
    pub fn memory_bytes(&self) -> usize {
        match &self.quantized {
            Some(q) => q.memory_bytes(),
            None => self.weight.len() * 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseWeights {
    /// `d_model x vocab_size`
    pub tok_emb: Matrix,
    /// `d_model x max_seq_len`
    pub pos_emb: Matrix,
    /// Indexed by `Projection::PER_LAYER` order.
    pub layers: Vec<Vec<FrozenLinear>>,
    pub lm_head: FrozenLinear,
}

impl BaseWeights {
    /// Random initialization: unit-variance token embeddings, smaller
    /// position embeddings, and `1/sqrt(fan_in)` projections.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let tok_emb = Matrix::randn(d, config.vocab_size, 1.0, &mut rng);
        let pos_emb = Matrix::randn(d, config.max_seq_len, 0.3, &mut rng);
        let linear = |p: Projection, rng: &mut ChaCha8Rng| {
            let (out, inp) = p.shape(config);
            FrozenLinear::dense(Matrix::randn(out, inp, 1.0 / (inp as f64).sqrt(), rng))
        };
        let layers = (0..config.n_layers)
            .map(|_| {
                Projection::PER_LAYER
                    .iter()
                    .map(|&p| linear(p, &mut rng))
                    .collect()
            })
            .collect();
        let lm_head = linear(Projection::LmHead, &mut rng);
        Ok(Self {
            tok_emb,
            pos_emb,
            layers,
            lm_head,
        })
    }

    pub fn get(&self, id: ProjectionId) -> &FrozenLinear {
        match id.layer {
            Some(l) => &self.layers[l][id.proj.slot()],
            None => &self.lm_head,
        }
    }

    /// Replaces every per-layer projection with its block-quantized form.
    /// Embeddings and the output head stay in full precision.
    pub fn quantize(&mut self, bit_width: BitWidth, block_size: usize) -> Result<(), ModelError> {
        for layer in &mut self.layers {
            for lin in layer.iter_mut() {
                let q = quantize_blockwise(&lin.weight, bit_width, block_size)?;
                *lin = FrozenLinear::from_quantized(q);
            }
        }
        Ok(())
    }

    pub fn is_quantized(&self) -> bool {
        self.layers.iter().flatten().any(|l| l.quantized.is_some())
    }

    pub fn num_params(&self) -> usize {
        self.tok_emb.len()
            + self.pos_emb.len()
            + self.lm_head.weight.len()
            + self.layers.iter().flatten().map(|l| l.weight.len()).sum::<usize>()
    }

    pub fn memory_bytes(&self) -> usize {
        (self.tok_emb.len() + self.pos_emb.len()) * 8
            + self.lm_head.memory_bytes()
            + self.layers.iter().flatten().map(FrozenLinear::memory_bytes).sum::<usize>()
    }

    /// SHA-256 over the bit patterns of every weight used in the forward pass.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |m: &Matrix| {
            for v in m.data() {
                h.update(v.to_le_bytes());
            }
        };
        feed(&self.tok_emb);
        feed(&self.pos_emb);
        for lin in self.layers.iter().flatten() {
            feed(&lin.weight);
        }
        feed(&self.lm_head.weight);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Adapters keyed by the weight they attach to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdapterSet {
    map: BTreeMap<ProjectionId, LoraAdapter>,
}

impl AdapterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fresh adapters (`B = 0`) on every site selected by `config.lora_targets`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = Self::new();
        for id in config.adapter_sites() {
            let (d, k) = id.proj.shape(config);
            let ad = LoraAdapter::init(d, k, config.lora, id.to_string(), &mut rng)?;
            set.map.insert(id, ad);
        }
        Ok(set)
    }

    pub fn insert(&mut self, id: ProjectionId, adapter: LoraAdapter) -> Option<LoraAdapter> {
        self.map.insert(id, adapter)
    }

    pub fn get(&self, id: ProjectionId) -> Option<&LoraAdapter> {
        self.map.get(&id)
    }

    pub fn get_mut(&mut self, id: ProjectionId) -> Option<&mut LoraAdapter> {
        self.map.get_mut(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ProjectionId, &LoraAdapter)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ProjectionId, &mut LoraAdapter)> {
        self.map.iter_mut().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.map.values().map(LoraAdapter::num_params).sum()
    }

    fn check(&self, config: &ModelConfig) -> Result<(), ModelError> {
        for (id, ad) in &self.map {
            if id.layer.is_some_and(|l| l >= config.n_layers) {
                return Err(ModelError::UnknownProjection(id.to_string()));
            }
            let want = id.proj.shape(config);
            if ad.weight_shape() != want {
                return Err(TensorError::ShapeMismatch {
                    op: "adapter",
                    left: want,
                    right: ad.weight_shape(),
                }
                .into());
            }
        }
        Ok(())
    }
}

/// Tape handles for the frozen weights.
#[derive(Debug, Clone)]
pub struct BaseVars {
    tok_emb: Var,
    pos_emb: Var,
    layers: Vec<Vec<Var>>,
    lm_head: Var,
}

impl BaseVars {
    fn get(&self, id: ProjectionId) -> Var {
        match id.layer {
            Some(l) => self.layers[l][id.proj.slot()],
            None => self.lm_head,
        }
    }
}

pub type AdapterVarMap = BTreeMap<ProjectionId, AdapterVars>;

/// A tokenized training sequence: `[BOS] prompt completion [EOD]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    /// Identifier used in error messages; may be empty.
    pub name: String,
    pub ids: Vec<usize>,
    /// Index in `ids` of the first completion token.
    pub completion_start: usize,
}

impl EncodedExample {
    pub fn new(prompt: &[usize], completion: &[usize]) -> Self {
        let mut ids = Vec::with_capacity(prompt.len() + completion.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(prompt);
        ids.extend_from_slice(completion);
        ids.push(EOD);
        Self {
            name: String::new(),
            ids,
            completion_start: 1 + prompt.len(),
        }
    }

    /// Model input (all but the last id).
    pub fn inputs(&self) -> &[usize] {
        &self.ids[..self.ids.len() - 1]
    }

    /// Input positions whose next token is part of the completion or EOD.
    pub fn loss_positions(&self) -> Vec<usize> {
        (self.completion_start - 1..self.ids.len() - 1).collect()
    }

    pub fn targets(&self) -> &[usize] {
        &self.ids[self.completion_start..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub base: BaseWeights,
    pub adapters: AdapterSet,
}

impl Model {
    /// Randomly initialized base weights with no adapters attached.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let base = BaseWeights::init(&config, seed)?;
        Ok(Self {
            config,
            base,
            adapters: AdapterSet::new(),
        })
    }

    pub fn with_adapters(mut self, adapters: AdapterSet) -> Result<Self, ModelError> {
        adapters.check(&self.config)?;
        self.adapters = adapters;
        Ok(self)
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), ModelError> {
        if ids.len() > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&id) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Records the frozen weights as borrowed constants.
    pub fn bind_base<'a>(&'a self, tape: &mut Tape<'a>) -> BaseVars {
        let b = &self.base;
        BaseVars {
            tok_emb: tape.constant(&b.tok_emb),
            pos_emb: tape.constant(&b.pos_emb),
            layers: b
                .layers
                .iter()
                .map(|l| l.iter().map(|lin| tape.constant(&lin.weight)).collect())
                .collect(),
            lm_head: tape.constant(&b.lm_head.weight),
        }
    }

    /// Like [`bind_base`](Self::bind_base) but copies the weights onto the
    /// tape, so the tape may outlive the borrow of `self`.
    pub fn bind_base_owned(&self, tape: &mut Tape<'_>) -> BaseVars {
        let b = &self.base;
        BaseVars {
            tok_emb: tape.input(b.tok_emb.clone()),
            pos_emb: tape.input(b.pos_emb.clone()),
            layers: b
                .layers
                .iter()
                .map(|l| l.iter().map(|lin| tape.input(lin.weight.clone())).collect())
                .collect(),
            lm_head: tape.input(b.lm_head.weight.clone()),
        }
    }

    /// Records every adapter matrix as a trainable leaf.
    pub fn bind_adapters<'a>(&'a self, tape: &mut Tape<'a>) -> AdapterVarMap {
        self.adapters
            .iter()
            .map(|(id, ad)| {
                let vars = AdapterVars {
                    a: tape.param(&ad.a),
                    b: tape.param(&ad.b),
                };
                (id, vars)
            })
            .collect()
    }

    fn project<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        base: &BaseVars,
        adapters: &AdapterVarMap,
        id: ProjectionId,
        x: Var,
        rng: Option<&mut R>,
    ) -> Result<Var, ModelError> {
        let out = tape.matmul(base.get(id), x)?;
        match (adapters.get(&id), self.adapters.get(id)) {
            (Some(&vars), Some(ad)) => Ok(lora_on_tape(tape, ad, vars, out, x, rng)?),
            _ => Ok(out),
        }
    }

    /// Records the forward pass for `ids` and returns `vocab x n` logits,
    /// one column per entry of `logit_positions` (or per input position).
    /// Dropout is active when `rng` is given.
    pub fn forward_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        base: &BaseVars,
        adapters: &AdapterVarMap,
        ids: &[usize],
        logit_positions: Option<&[usize]>,
        mut rng: Option<&mut R>,
    ) -> Result<Var, ModelError> {
        self.check_ids(ids)?;
        if ids.is_empty() {
            return Err(TensorError::Empty("forward").into());
        }
        let cfg = &self.config;
        let dh = cfg.head_dim();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let tok = tape.gather_cols(base.tok_emb, ids)?;
        let pos = tape.gather_cols(base.pos_emb, &positions)?;
        let mut x = tape.add(tok, pos)?;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();

        for l in 0..cfg.n_layers {
            let id = |p| ProjectionId::layer(l, p);
            let h = tape.rms_norm(x)?;
            let q = self.project(tape, base, adapters, id(Projection::QProj), h, rng.as_deref_mut())?;
            let k = self.project(tape, base, adapters, id(Projection::KProj), h, rng.as_deref_mut())?;
            let v = self.project(tape, base, adapters, id(Projection::VProj), h, rng.as_deref_mut())?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for hd in 0..cfg.n_heads {
                let qh = tape.slice_rows(q, hd * dh, dh)?;
                let kh = tape.slice_rows(k, hd * dh, dh)?;
                let vh = tape.slice_rows(v, hd * dh, dh)?;
                let scores = tape.matmul_t(qh, true, kh, false)?;
                let scores = tape.scale(scores, inv_sqrt)?;
                let p = tape.causal_softmax(scores)?;
                heads.push(tape.matmul_t(vh, false, p, true)?);
            }
            let att = tape.concat_rows(&heads)?;
            let o = self.project(tape, base, adapters, id(Projection::OProj), att, rng.as_deref_mut())?;
            x = tape.add(x, o)?;

            let h = tape.rms_norm(x)?;
            let g = self.project(tape, base, adapters, id(Projection::GateProj), h, rng.as_deref_mut())?;
            let u = self.project(tape, base, adapters, id(Projection::UpProj), h, rng.as_deref_mut())?;
            let g = tape.silu(g)?;
            let a = tape.mul(g, u)?;
            let dn = self.project(tape, base, adapters, id(Projection::DownProj), a, rng.as_deref_mut())?;
            x = tape.add(x, dn)?;
        }

        let h = tape.rms_norm(x)?;
        let h = match logit_positions {
            Some(p) => tape.select_cols(h, p)?,
            None => h,
        };
        self.project(tape, base, adapters, ProjectionId::head(), h, rng)
    }

    /// Mean next-token cross-entropy over the completion and EOD of one
    /// example; prompt positions carry no loss.
    pub fn example_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        base: &BaseVars,
        adapters: &AdapterVarMap,
        example: &EncodedExample,
        rng: Option<&mut R>,
    ) -> Result<Var, ModelError> {
        let positions = example.loss_positions();
        let logits = self.forward_tape(tape, base, adapters, example.inputs(), Some(&positions), rng)?;
        Ok(tape.cross_entropy(logits, example.targets())?)
    }

    /// Logits for every position, `seq x vocab`.
    pub fn forward(&self, ids: &[usize]) -> Result<Matrix, ModelError> {
        let mut tape = Tape::new();
        let base = self.bind_base(&mut tape);
        let adapters: AdapterVarMap = self
            .adapters
            .iter()
            .map(|(id, ad)| {
                let vars = AdapterVars {
                    a: tape.constant(&ad.a),
                    b: tape.constant(&ad.b),
                };
                (id, vars)
            })
            .collect();
        let logits = self.forward_tape::<ChaCha8Rng>(&mut tape, &base, &adapters, ids, None, None)?;
        Ok(tape.value(logits).transpose())
    }

    /// Greedy decoding after `[BOS] prompt`. Stops at EOD (not included),
    /// after `max_new` tokens, or when `[BOS] prompt output` fills
    /// `max_seq_len`.
    pub fn generate_ids(&self, prompt: &[usize], max_new: usize) -> Result<Vec<usize>, ModelError> {
        if prompt.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        let len = prompt.len() + 1;
        if len > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len,
                max: self.config.max_seq_len,
            });
        }
        self.check_ids(prompt)?;
        let mut out = Vec::new();
        if max_new == 0 || len == self.config.max_seq_len {
            return Ok(out);
        }
        let mut dec = Decoder::new(self)?;
        dec.step(BOS, false);
        for (i, &t) in prompt.iter().enumerate() {
            dec.step(t, i + 1 == prompt.len());
        }
        loop {
            let next = argmax(dec.logits());
            if next == EOD {
                break;
            }
            out.push(next);
            if out.len() == max_new || dec.len() + 1 == self.config.max_seq_len {
                break;
            }
            dec.step(next, true);
        }
        Ok(out)
    }

    /// Greedy completion rendered as text.
    pub fn generate(
        &self,
        tokenizer: &Tokenizer,
        prompt: &[usize],
        max_new: usize,
    ) -> Result<String, ModelError> {
        let ids = self.generate_ids(prompt, max_new)?;
        tokenizer.render(&ids)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Logits `seq x vocab` for `ids` under `weights` plus `adapters`.
pub fn model_forward(
    config: &ModelConfig,
    weights: &BaseWeights,
    adapters: &AdapterSet,
    ids: &[usize],
) -> Result<Matrix, ModelError> {
    let model = Model {
        config: config.clone(),
        base: weights.clone(),
        adapters: AdapterSet::new(),
    }
    .with_adapters(adapters.clone())?;
    model.forward(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            d_ff: 24,
            max_seq_len: 12,
            lora_targets: Projection::ALL.into_iter().collect(),
            lora: LoraConfig {
                rank: 4,
                alpha: 8.0,
                dropout: 0.0,
            },
        }
    }

    fn randomize_b(set: &mut AdapterSet, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, ad) in set.iter_mut() {
            ad.b = Matrix::randn(ad.b.rows(), ad.b.cols(), 0.1, &mut rng);
        }
    }

    #[test]
    fn projection_names_round_trip() {
        for p in Projection::ALL {
            assert_eq!(p.name().parse::<Projection>().unwrap(), p);
        }
        assert!("w_proj".parse::<Projection>().is_err());
        for id in tiny_config().adapter_sites() {
            assert_eq!(id.to_string().parse::<ProjectionId>().unwrap(), id);
        }
        assert!("layers.0.lm_head".parse::<ProjectionId>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let c = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(ModelError::Config(_))));
        assert!(ModelConfig::parse_targets(&["q_proj", "bogus"]).is_err());
        assert_eq!(tiny_config().adapter_sites().len(), 2 * 7 + 1);
    }

    #[test]
    fn logits_shape() {
        let m = Model::new(tiny_config(), 1).unwrap();
        let logits = m.forward(&[0, 5, 6, 7]).unwrap();
        assert_eq!(logits.shape(), (4, 20));
    }

    #[test]
    fn zero_adapters_are_bit_neutral() {
        let cfg = tiny_config();
        let plain = Model::new(cfg.clone(), 3).unwrap();
        let adapted = plain
            .clone()
            .with_adapters(AdapterSet::init(&cfg, 4).unwrap())
            .unwrap();
        assert_eq!(adapted.adapters.len(), 15);
        let ids = [0, 4, 9, 11, 2, 7];
        assert!(plain.forward(&ids).unwrap().bit_eq(&adapted.forward(&ids).unwrap()));
    }

    #[test]
    fn future_tokens_do_not_change_past_logits() {
        let cfg = tiny_config();
        let mut adapters = AdapterSet::init(&cfg, 6).unwrap();
        randomize_b(&mut adapters, 7);
        let m = Model::new(cfg, 5).unwrap().with_adapters(adapters).unwrap();
        let a = m.forward(&[0, 4, 9, 11, 2, 7]).unwrap();
        let b = m.forward(&[0, 4, 9, 15, 19, 3]).unwrap();
        for t in 0..3 {
            for v in 0..20 {
                assert_eq!(a.get(t, v).to_bits(), b.get(t, v).to_bits());
            }
        }
        assert!(a.max_abs_diff(&b).unwrap() > 0.0);
    }

    #[test]
    fn overlong_sequence_names_the_budgets() {
        let m = Model::new(tiny_config(), 1).unwrap();
        let err = m.forward(&[4; 13]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1500") && msg.contains("2000"), "{msg}");
        assert!(matches!(err, ModelError::SequenceTooLong { len: 13, max: 12 }));
    }

    #[test]
    fn out_of_vocab_ids_rejected() {
        let m = Model::new(tiny_config(), 1).unwrap();
        assert!(matches!(
            m.forward(&[0, 20]),
            Err(ModelError::TokenOutOfRange { id: 20, .. })
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let cfg = tiny_config();
        let mut adapters = AdapterSet::init(&cfg, 8).unwrap();
        randomize_b(&mut adapters, 9);
        let model = Model::new(cfg, 10).unwrap().with_adapters(adapters).unwrap();
        let target = ProjectionId::layer(1, Projection::VProj);
        let example = EncodedExample::new(&[5, 6, 7], &[8, 9]);
        let a0 = model.adapters.get(target).unwrap().a.clone();
        let err = grad_check(
            |tape, vars| {
                let base = model.bind_base_owned(tape);
                let mut av = AdapterVarMap::new();
                for (id, ad) in model.adapters.iter() {
                    let a = if id == target { vars[0] } else { tape.input(ad.a.clone()) };
                    let b = tape.input(ad.b.clone());
                    av.insert(id, AdapterVars { a, b });
                }
                model
                    .example_loss::<ChaCha8Rng>(tape, &base, &av, &example, None)
                    .map_err(|e| match e {
                        ModelError::Tensor(t) => t,
                        other => panic!("{other}"),
                    })
            },
            &[a0],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn frozen_weights_get_no_gradients() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone(), 1)
            .unwrap()
            .with_adapters(AdapterSet::init(&cfg, 2).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let base = model.bind_base(&mut tape);
        let av = model.bind_adapters(&mut tape);
        let ex = EncodedExample::new(&[5, 6], &[7]);
        let loss = model
            .example_loss::<ChaCha8Rng>(&mut tape, &base, &av, &ex, None)
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.allocated(), 2 * av.len());
        assert!(grads.get(base.tok_emb).is_none());
        assert!(grads.get(base.lm_head).is_none());
    }

    #[test]
    fn example_layout() {
        let ex = EncodedExample::new(&[10, 11], &[12, 13, 14]);
        assert_eq!(ex.ids, vec![BOS, 10, 11, 12, 13, 14, EOD]);
        assert_eq!(ex.inputs(), &[BOS, 10, 11, 12, 13, 14]);
        assert_eq!(ex.loss_positions(), vec![2, 3, 4, 5]);
        assert_eq!(ex.targets(), &[12, 13, 14, EOD]);
    }

    #[test]
    fn generation_edge_cases() {
        let m = Model::new(tiny_config(), 1).unwrap();
        assert!(m.generate_ids(&[5, 6], 0).unwrap().is_empty());
        assert!(matches!(m.generate_ids(&[], 3), Err(ModelError::EmptyPrompt)));
        let a = m.generate_ids(&[5, 6, 7], 5).unwrap();
        assert_eq!(a, m.generate_ids(&[5, 6, 7], 5).unwrap());
        assert!(a.len() <= 5);
        // sequence budget of 12 caps the output
        let long = m.generate_ids(&[5; 9], 100).unwrap();
        assert!(long.len() <= 2, "{long:?}");
        assert!(m.generate_ids(&[5; 11], 100).unwrap().is_empty());
    }

    #[test]
    fn decoder_matches_full_forward() {
        let cfg = tiny_config();
        let mut adapters = AdapterSet::init(&cfg, 3).unwrap();
        randomize_b(&mut adapters, 4);
        let m = Model::new(cfg, 2).unwrap().with_adapters(adapters).unwrap();
        let ids = [BOS, 5, 9, 13, 4, 17];
        let full = m.forward(&ids).unwrap();
        let mut dec = Decoder::new(&m).unwrap();
        for (t, &id) in ids.iter().enumerate() {
            dec.step(id, true);
            for v in 0..20 {
                assert!((dec.logits()[v] - full.get(t, v)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn quantized_base_uses_dequantized_weights() {
        let cfg = tiny_config();
        let mut m = Model::new(cfg, 2).unwrap();
        let dense_bytes = m.base.memory_bytes();
        m.base.quantize(BitWidth::Four, 16).unwrap();
        assert!(m.base.is_quantized());
        assert!(m.base.memory_bytes() < dense_bytes);
        let q = m.base.get(ProjectionId::layer(0, Projection::UpProj));
        assert_eq!(q.weight(), &dequantize(q.quantized().unwrap()));
        assert!(m.forward(&[0, 1, 2]).is_ok());
    }

    #[test]
    fn checksum_tracks_weights() {
        let mut m = Model::new(tiny_config(), 1).unwrap();
        let c = m.base.checksum();
        assert_eq!(c, m.base.checksum());
        m.base.tok_emb.data_mut()[0] += 1.0;
        assert_ne!(c, m.base.checksum());
    }
}
