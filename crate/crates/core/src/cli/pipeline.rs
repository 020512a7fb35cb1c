//! Library side of the `train` subcommand, shared with the test suites.

use std::path::Path;

use serde_json::json;

use crate::dataprep::{self, DataError, TrainingExample};
use crate::model::{AdapterSet, Checkpoint, EncodedExample, Model, ModelConfig, ModelError, Tokenizer};
use crate::quant::BitWidth;
use crate::trainer::{self, MemoryBudget, StepMetrics, TrainConfig, TrainError};

/// Block size used when quantizing the frozen base.
pub const QUANT_BLOCK: usize = 64;

pub fn read_examples(path: &Path) -> Result<Vec<TrainingExample>, DataError> {
    dataprep::read_jsonl(path)
}

pub fn write_examples(path: &Path, examples: &[TrainingExample]) -> Result<(), DataError> {
    dataprep::write_jsonl(path, examples)
}

/// Word vocabulary over all prompts and completions.
pub fn build_tokenizer(examples: &[TrainingExample], max_size: usize) -> Result<Tokenizer, ModelError> {
    let texts: Vec<&str> = examples
        .iter()
        .flat_map(|e| [e.prompt.as_str(), e.completion.as_str()])
        .collect();
    Tokenizer::build(&texts, max_size)
}

pub fn encode_examples(tokenizer: &Tokenizer, examples: &[TrainingExample]) -> Vec<EncodedExample> {
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| EncodedExample {
            name: format!("#{i}"),
            ..EncodedExample::new(&tokenizer.encode(&e.prompt), &tokenizer.encode(&e.completion))
        })
        .collect()
}

/// Default-sized model over `vocab_size` tokens: base weights drawn from
/// `seed`, fresh adapters from `seed + 1`, base optionally quantized.
pub fn fresh_model(vocab_size: usize, seed: u64, quantize: Option<BitWidth>) -> Result<Model, ModelError> {
    let config = ModelConfig {
        vocab_size,
        ..ModelConfig::default()
    };
    let mut model = Model::new(config.clone(), seed)?;
    if let Some(bits) = quantize {
        model.base.quantize(bits, QUANT_BLOCK)?;
    }
    model.with_adapters(AdapterSet::init(&config, seed.wrapping_add(1))?)
}

pub struct TrainArtifacts {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<StepMetrics>,
}

/// Tokenizer, fresh model and adapter training in one call.
pub fn train_pipeline(
    examples: &[TrainingExample],
    config: &TrainConfig,
    vocab_size: usize,
    quantize: Option<BitWidth>,
    budget: &mut MemoryBudget,
) -> Result<TrainArtifacts, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let tokenizer = build_tokenizer(examples, vocab_size)?;
    let data = encode_examples(&tokenizer, examples);
    let mut model = fresh_model(tokenizer.len(), config.seed, quantize)?;
    let metrics = trainer::train(&mut model, &data, config, budget, |_| {})?;
    let metadata = json!({
        "train_config": config,
        "quantize_bits": quantize.map(|b| b.bits()),
        "examples": examples.len(),
    });
    Ok(TrainArtifacts {
        checkpoint: Checkpoint {
            model,
            tokenizer,
            metadata,
        },
        metrics,
    })
}
