//! Two-stage fine-tuning.
//!
//! Stage one trains the backbone (embeddings, every encoder layer and the
//! final ramp) on the final ramp's loss `L_n`. Stage two freezes all of
//! that and trains ramps `1..n-1` on `Σ_{i<n} L_i`. Frozen parameters are
//! recorded on the tape as constants and never handed to the optimizer.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batch_indices, encode_batch, Example, Vocab};
use crate::error::{Error, Result};
use crate::model::{EarlyExitModel, Forward, Partition, TokenBatch};
use crate::tensor::{self, AdamConfig, AdamState, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Epochs of stage one.
    pub epochs: usize,
    /// Epochs of stage two; defaults to `epochs`.
    pub stage2_epochs: Option<usize>,
    pub batch_size: usize,
    /// Set from the run seed; not read from config files.
    #[serde(skip)]
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 norm bound on the gradient of each step.
    pub grad_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 5,
            stage2_epochs: None,
            batch_size: 32,
            seed: 42,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            grad_clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: &str| {
            Err(Error::Config {
                field,
                reason: reason.into(),
            })
        };
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.stage2_epochs == Some(0) {
            return bad("stage2_epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1", "beta1 and beta2 must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon", "must be positive");
        }
        if let Some(c) = self.grad_clip_norm {
            if c.is_nan() || c <= 0.0 {
                return bad("grad_clip_norm", "must be positive");
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    fn epochs_for(&self, stage: Stage) -> usize {
        match stage {
            Stage::One => self.epochs,
            Stage::Two => self.stage2_epochs.unwrap_or(self.epochs),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    fn trainable(self) -> Partition {
        match self {
            Stage::One => Partition::Backbone,
            Stage::Two => Partition::IntermediateRamps,
        }
    }

    /// 1-based ramps whose losses are summed.
    fn loss_ramps(self, n_layers: usize) -> Vec<usize> {
        match self {
            Stage::One => vec![n_layers],
            Stage::Two => (1..n_layers).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    /// 1-based ramps whose losses were summed.
    pub loss_ramps: Vec<usize>,
    /// Example-weighted mean training loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    /// Optimizer updates applied to each parameter, by name.
    pub parameter_updates: BTreeMap<String, u64>,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stages: Vec<StageReport>,
    /// Forced-exit development quality of every ramp after training.
    pub dev_layerwise_quality: Vec<f64>,
}

fn labels_of(examples: &[&Example]) -> Vec<usize> {
    examples.iter().map(|e| e.label).collect()
}

/// Mean cross-entropy of ramp `i` over a batch.
pub fn ramp_loss(
    model: &EarlyExitModel,
    batch: &TokenBatch,
    labels: &[usize],
    i: usize,
) -> Result<Tensor> {
    if batch.batch == 0 || labels.is_empty() {
        return Err(Error::invalid("ramp loss of an empty batch"));
    }
    let logits = model.forward_prefix(batch, i)?;
    tensor::cross_entropy(&logits, labels)
}

/// Seeds of the shuffle and dropout streams of one step; distinct per
/// (stage, epoch, step).
fn derive_seed(base: u64, stage: Stage, epoch: usize, step: usize) -> u64 {
    let mut x = base
        ^ (stage.number() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (epoch as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (step as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    x
}

fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

fn run_stage(
    model: &mut EarlyExitModel,
    train: &[Example],
    vocab: &Vocab,
    config: &TrainConfig,
    stage: Stage,
) -> Result<StageReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let n = model.n_layers();
    let ramps = stage.loss_ramps(n);
    if ramps.is_empty() {
        return Err(Error::invalid(
            "a one-layer model has no intermediate ramps to train",
        ));
    }
    let depth = *ramps.iter().max().unwrap();
    let partition = stage.trainable();
    let ids = model.parameter_ids(partition);
    let sizes: Vec<usize> = ids.iter().map(|&i| model.parameters()[i].numel()).collect();
    let mut adam = AdamState::new(config.adam(), &sizes);
    let max_len = model.config().max_seq_len;

    let mut updates = vec![0u64; model.num_parameters()];
    let mut epoch_losses = Vec::new();
    let mut steps = 0u64;
    let start = Instant::now();

    for epoch in 0..config.epochs_for(stage) {
        let order = batch_indices(
            train.len(),
            config.batch_size,
            derive_seed(config.seed, stage, epoch, usize::MAX),
            true,
        )?;
        let mut loss_sum = 0.0;
        for (step, idx) in order.iter().enumerate() {
            let examples: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
            let tokens = encode_batch(examples.iter().copied(), vocab, max_len);
            let labels = labels_of(&examples);
            let dropout = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stage, epoch, step));

            let (loss, mut grads) = {
                let mut fwd = Forward::new(model, &tokens, Some(partition), Some(dropout))?;
                for _ in 0..depth {
                    fwd.advance()?;
                }
                let mut total = None;
                for &i in &ramps {
                    let logits = fwd.ramp(i)?;
                    let l = fwd.tape_mut().cross_entropy(logits, &labels)?;
                    total = Some(match total {
                        None => l,
                        Some(acc) => fwd.tape_mut().add(acc, l)?,
                    });
                }
                let total = total.expect("at least one ramp");
                let loss = fwd.tape().value(total).item();
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        stage: stage.number(),
                        epoch,
                        step,
                        loss,
                    });
                }
                fwd.tape_mut().backward(total)?;
                let bound: BTreeMap<usize, _> = fwd.bound_parameters().collect();
                let grads: Vec<Vec<f64>> = ids
                    .iter()
                    .map(|id| {
                        bound
                            .get(id)
                            .and_then(|&v| fwd.tape().grad(v))
                            .map(<[f64]>::to_vec)
                            .unwrap_or_else(|| vec![0.0; model.parameters()[*id].numel()])
                    })
                    .collect();
                (loss, grads)
            };

            if let Some(max_norm) = config.grad_clip_norm {
                let norm = global_norm(&grads);
                if norm > max_norm {
                    let scale = max_norm / norm;
                    grads.iter_mut().flatten().for_each(|g| *g *= scale);
                }
            }

            let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            let mut params: Vec<&mut Tensor> = model
                .parameters_mut()
                .iter_mut()
                .enumerate()
                .filter(|(i, _)| ids.binary_search(i).is_ok())
                .map(|(_, p)| p)
                .collect();
            adam.step(&mut params, &grad_refs)?;
            for &id in &ids {
                updates[id] += 1;
            }
            steps += 1;
            loss_sum += loss * examples.len() as f64;
        }
        epoch_losses.push(loss_sum / train.len() as f64);
    }

    let parameter_updates = model
        .parameter_names()
        .iter()
        .cloned()
        .zip(updates)
        .collect();
    Ok(StageReport {
        stage: stage.number(),
        loss_ramps: ramps,
        epoch_losses,
        steps,
        parameter_updates,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// Trains the backbone on the final ramp's loss.
pub fn stage_one(
    model: &mut EarlyExitModel,
    train: &[Example],
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<StageReport> {
    run_stage(model, train, vocab, config, Stage::One)
}

/// Trains ramps `1..n-1` on the sum of their losses with the backbone frozen.
pub fn stage_two(
    model: &mut EarlyExitModel,
    train: &[Example],
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<StageReport> {
    run_stage(model, train, vocab, config, Stage::Two)
}
