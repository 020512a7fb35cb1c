//! Model checkpoint file.
//!
//! ```text
//! "LLCK" u32 version
//! str   config (JSON)
//! str   tokenizer (JSON)
//! str   metadata (JSON)
//! mat   tok_emb, mat pos_emb
//! per layer, per projection, then lm_head:
//!       u8 0 + mat          dense weight
//!       u8 1 + quantized    block-quantized weight
//! u64   adapter count, then per adapter: str site + adapter
//! ```

use std::path::Path;

use crate::codec::{CodecError, Reader, Writer};
use crate::lora::LoraAdapter;
use crate::quant::QuantizedMatrix;

use super::{AdapterSet, BaseWeights, FrozenLinear, Model, ModelConfig, ModelError, ProjectionId, Tokenizer};

const MAGIC: &[u8; 4] = b"LLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub tokenizer: Tokenizer,
    pub metadata: serde_json::Value,
}

fn write_linear(w: &mut Writer, lin: &FrozenLinear) {
    match lin.quantized() {
        Some(q) => {
            w.u8(1);
            q.encode(w);
        }
        None => {
            w.u8(0);
            w.matrix(lin.weight());
        }
    }
}

fn read_linear(r: &mut Reader<'_>) -> Result<FrozenLinear, CodecError> {
    match r.u8()? {
        0 => Ok(FrozenLinear::dense(r.matrix()?)),
        1 => Ok(FrozenLinear::from_quantized(QuantizedMatrix::decode(r)?)),
        t => Err(CodecError::Invalid(format!("unknown weight tag {t}"))),
    }
}

fn expect_shape(got: (usize, usize), want: (usize, usize), what: &str) -> Result<(), CodecError> {
    if got != want {
        return Err(CodecError::Invalid(format!(
            "{what} is {}x{}, config requires {}x{}",
            got.0, got.1, want.0, want.1
        )));
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut w = Writer::new();
        w.magic(MAGIC, CHECKPOINT_VERSION);
        w.str(&serde_json::to_string(&self.model.config)?);
        w.str(&serde_json::to_string(&self.tokenizer)?);
        w.str(&serde_json::to_string(&self.metadata)?);
        let base = &self.model.base;
        w.matrix(&base.tok_emb);
        w.matrix(&base.pos_emb);
        for lin in base.layers.iter().flatten() {
            write_linear(&mut w, lin);
        }
        write_linear(&mut w, &base.lm_head);
        w.u64(self.model.adapters.len() as u64);
        for (id, ad) in self.model.adapters.iter() {
            w.str(&id.to_string());
            ad.encode(&mut w);
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader::new(bytes);
        let version = r.magic(MAGIC)?;
        if version != CHECKPOINT_VERSION {
            return Err(CodecError::Version(version).into());
        }
        let config: ModelConfig = serde_json::from_str(r.str()?)?;
        config.validate()?;
        let tokenizer: Tokenizer = serde_json::from_str(r.str()?)?;
        if tokenizer.len() > config.vocab_size {
            return Err(ModelError::Config(format!(
                "tokenizer has {} entries but vocab_size is {}",
                tokenizer.len(),
                config.vocab_size
            )));
        }
        let metadata: serde_json::Value = serde_json::from_str(r.str()?)?;
        let tok_emb = r.matrix()?;
        expect_shape(tok_emb.shape(), (config.d_model, config.vocab_size), "tok_emb")?;
        let pos_emb = r.matrix()?;
        expect_shape(pos_emb.shape(), (config.d_model, config.max_seq_len), "pos_emb")?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let mut layer = Vec::with_capacity(7);
            for p in super::Projection::PER_LAYER {
                let lin = read_linear(&mut r)?;
                let id = ProjectionId::layer(l, p);
                expect_shape(lin.weight().shape(), p.shape(&config), &id.to_string())?;
                layer.push(lin);
            }
            layers.push(layer);
        }
        let lm_head = read_linear(&mut r)?;
        expect_shape(
            lm_head.weight().shape(),
            super::Projection::LmHead.shape(&config),
            "lm_head",
        )?;
        let mut adapters = AdapterSet::new();
        for _ in 0..r.usize()? {
            let id: ProjectionId = r.str()?.parse()?;
            let ad = LoraAdapter::decode(&mut r)?;
            if adapters.insert(id, ad).is_some() {
                return Err(CodecError::Invalid(format!("duplicate adapter {id}")).into());
            }
        }
        r.expect_end()?;
        let base = BaseWeights {
            tok_emb,
            pos_emb,
            layers,
            lm_head,
        };
        let model = Model {
            config,
            base,
            adapters: AdapterSet::new(),
        }
        .with_adapters(adapters)?;
        Ok(Self {
            model,
            tokenizer,
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
