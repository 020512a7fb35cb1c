//! Adapter training: AdamW with gradient accumulation, optional 8-bit
//! optimizer state, and a paged-optimizer residency simulator.
//!
//! Parameter groups are the adapters of one block, plus one group for the
//! output head. Within a micro-batch the groups are touched in forward
//! order, then in reverse for the backward pass; on the last micro-batch of
//! a step the optimizer update for each group runs during that reverse
//! sweep.

mod optim;
mod paging;

pub use optim::{accumulate, adamw_step, state_bytes, AdamW, ParamState, STATE_BLOCK_SIZE};
pub use paging::{manage_residency, EventKind, MemoryBudget, PagedState, ResidencyEvent};

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::model::{EncodedExample, Model, ModelError, ProjectionId};
use crate::tensor::{Matrix, Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("nothing to accumulate")]
    EmptyAccumulation,
    #[error("model has no adapters attached; only adapter training is supported")]
    NoAdapters,
    #[error("example {example} has {tokens} tokens, over the budget of {max}")]
    TokenBudget {
        example: String,
        tokens: usize,
        max: usize,
    },
    #[error("non-finite loss or gradient at step {step}")]
    NonFinite { step: usize },
    #[error("parameter group {group} needs {bytes} bytes but the fast pool holds {capacity}")]
    GroupTooLarge {
        group: usize,
        bytes: usize,
        capacity: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub micro_batch: usize,
    pub accumulation_steps: usize,
    pub total_steps: usize,
    pub max_tokens: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub eight_bit_optimizer: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::summary_task()
    }
}

impl TrainConfig {
    /// 500 steps with a 1500-token budget.
    pub fn summary_task() -> Self {
        Self {
            learning_rate: 1e-5,
            micro_batch: 2,
            accumulation_steps: 2,
            total_steps: 500,
            max_tokens: 1500,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            eight_bit_optimizer: true,
        }
    }

    /// 15000 steps with a 2000-token budget.
    pub fn letter_task() -> Self {
        Self {
            total_steps: 15_000,
            max_tokens: 2000,
            ..Self::summary_task()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.micro_batch == 0 || self.accumulation_steps == 0 || self.total_steps == 0 || self.max_tokens == 0 {
            return bad("micro_batch, accumulation_steps, total_steps and max_tokens must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay non-negative");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamW {
        AdamW {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain struct serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub fast_pool_bytes: usize,
    pub offload_events: usize,
    pub elapsed_ms: u64,
}

pub fn write_metrics_csv(path: &Path, rows: &[StepMetrics]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Adapter sites grouped for paging: one group per block, then the head.
pub fn parameter_groups(model: &Model) -> Vec<Vec<ProjectionId>> {
    let n = model.config.n_layers;
    let mut groups = vec![Vec::new(); n + 1];
    for (id, _) in model.adapters.iter() {
        groups[id.layer.unwrap_or(n)].push(id);
    }
    groups.retain(|g| !g.is_empty());
    groups
}

/// Fresh optimizer state laid out like [`parameter_groups`], with an `A`
/// and a `B` state per adapter.
pub fn optimizer_state(model: &Model, eight_bit: bool) -> PagedState {
    let shapes: Vec<Vec<(usize, usize)>> = parameter_groups(model)
        .iter()
        .map(|g| {
            g.iter()
                .flat_map(|id| {
                    let ad = model.adapters.get(*id).expect("grouped from the set");
                    [ad.a.shape(), ad.b.shape()]
                })
                .collect()
        })
        .collect();
    PagedState::new(&shapes, eight_bit)
}

struct Batches<'d> {
    data: &'d [EncodedExample],
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl<'d> Batches<'d> {
    fn new(data: &'d [EncodedExample], seed: u64) -> Self {
        Self {
            data,
            order: Vec::new(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next(&mut self) -> &'d EncodedExample {
        if self.pos == self.order.len() {
            self.order = (0..self.data.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        &self.data[self.order[self.pos - 1]]
    }
}

/// Loss and adapter gradients for one micro-batch (mean over its examples).
fn micro_batch_grads(
    model: &Model,
    batch: &[&EncodedExample],
    groups: &[Vec<ProjectionId>],
    dropout_rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Vec<Matrix>>), TrainError> {
    let mut tape = Tape::new();
    let base = model.bind_base(&mut tape);
    let vars = model.bind_adapters(&mut tape);
    let weight = 1.0 / batch.len() as f64;
    let mut total = None;
    for ex in batch {
        let l = model.example_loss(&mut tape, &base, &vars, ex, Some(&mut *dropout_rng))?;
        let l = tape.scale(l, weight)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    let total = total.expect("micro batch is non-empty");
    let loss = tape.value(total).data()[0];
    let mut grads = tape.backward(total)?;
    let out = groups
        .iter()
        .map(|g| {
            g.iter()
                .flat_map(|id| {
                    let v = vars[id];
                    [v.a, v.b]
                })
                .map(|v| {
                    grads
                        .take(v)
                        .unwrap_or_else(|| Matrix::zeros(tape.value(v).rows(), tape.value(v).cols()))
                })
                .collect()
        })
        .collect();
    Ok((loss, out))
}

/// Trains the adapters of `model` in place for `config.total_steps`
/// optimizer steps. `on_step` sees each metrics row as it is produced.
pub fn train(
    model: &mut Model,
    data: &[EncodedExample],
    config: &TrainConfig,
    budget: &mut MemoryBudget,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<Vec<StepMetrics>, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if model.adapters.is_empty() {
        return Err(TrainError::NoAdapters);
    }
    for (i, ex) in data.iter().enumerate() {
        if ex.ids.len() > config.max_tokens {
            return Err(TrainError::TokenBudget {
                example: if ex.name.is_empty() { format!("#{i}") } else { ex.name.clone() },
                tokens: ex.ids.len(),
                max: config.max_tokens,
            });
        }
    }

    let groups = parameter_groups(model);
    let mut state = optimizer_state(model, config.eight_bit_optimizer);
    let hp = config.adamw();
    let mut batches = Batches::new(data, config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);
    let start = Instant::now();
    let mut metrics = Vec::with_capacity(config.total_steps);

    for step in 1..=config.total_steps {
        let mut micro_grads: Vec<Vec<Vec<Matrix>>> = groups
            .iter()
            .map(|g| vec![Vec::with_capacity(config.accumulation_steps); 2 * g.len()])
            .collect();
        let mut loss_sum = 0.0;
        for micro in 0..config.accumulation_steps {
            for g in 0..groups.len() {
                manage_residency(&mut state, budget, g, step)?;
            }
            let batch: Vec<&EncodedExample> = (0..config.micro_batch).map(|_| batches.next()).collect();
            let (loss, grads) = match micro_batch_grads(model, &batch, &groups, &mut dropout_rng) {
                Err(TrainError::Tensor(TensorError::NonFinite(_)))
                | Err(TrainError::Model(ModelError::Tensor(TensorError::NonFinite(_)))) => {
                    return Err(TrainError::NonFinite { step })
                }
                other => other?,
            };
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { step });
            }
            loss_sum += loss;
            let last = micro + 1 == config.accumulation_steps;
            for (g, group_grads) in grads.into_iter().enumerate().rev() {
                manage_residency(&mut state, budget, g, step)?;
                for (slot, grad) in micro_grads[g].iter_mut().zip(group_grads) {
                    slot.push(grad);
                }
                if last {
                    let states = state.states_mut(g).expect("group was just made resident");
                    for (k, id) in groups[g].iter().enumerate() {
                        let ad = model.adapters.get_mut(*id).expect("grouped from the set");
                        let ga = accumulate(&micro_grads[g][2 * k])?;
                        let gb = accumulate(&micro_grads[g][2 * k + 1])?;
                        let nonfinite = |e| match e {
                            TrainError::NonFinite { .. } => TrainError::NonFinite { step },
                            other => other,
                        };
                        adamw_step(&mut states[2 * k], &mut ad.a, &ga, &hp).map_err(nonfinite)?;
                        adamw_step(&mut states[2 * k + 1], &mut ad.b, &gb, &hp).map_err(nonfinite)?;
                    }
                }
            }
        }
        let row = StepMetrics {
            step,
            loss: loss_sum / config.accumulation_steps as f64,
            fast_pool_bytes: budget.take_window_peak(),
            offload_events: budget.offload_count(),
            elapsed_ms: start.elapsed().as_millis() as u64,
        };
        on_step(&row);
        metrics.push(row);
    }
    Ok(metrics)
}
