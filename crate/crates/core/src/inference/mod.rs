//! Entropy-thresholded early-exit inference and forced-exit evaluation.
//!
//! A sample runs through the encoder one layer at a time. After layer `i`
//! ramp `i` produces a distribution `z_i`; the sample exits at the first `i`
//! where `entropy(z_i) < S`, otherwise it falls through to layer `n`.
//! Entropy is measured in nats, and the comparison is strict, so `S = 0`
//! always runs the full model.

mod export;

pub use export::{write_records_csv, write_records_jsonl, ThresholdedRecord};

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{encode_batch, Example, Stratum, Vocab};
use crate::error::{Error, Result};
use crate::model::{EarlyExitModel, Forward, TokenBatch};
use crate::tensor::kernels::softmax_axis;

/// Shannon entropy in nats with `0 · ln 0 = 0`, clamped to `[0, ln K]` so
/// rounding cannot push a near-uniform distribution past its bound.
pub fn entropy(probabilities: &[f64]) -> Result<f64> {
    if probabilities.is_empty() {
        return Err(Error::invalid("entropy of an empty distribution"));
    }
    if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid(format!(
            "distribution has negative or non-finite entries: {probabilities:?}"
        )));
    }
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "distribution sums to {total}, not 1"
        )));
    }
    let h: f64 = probabilities
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    // `+ 0.0` normalizes -0.0 from one-hot inputs
    Ok(h.clamp(0.0, (probabilities.len() as f64).ln()) + 0.0)
}

/// Entropy threshold `S` in nats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitPolicy {
    entropy_threshold: f64,
}

impl ExitPolicy {
    pub fn new(entropy_threshold: f64) -> Result<Self> {
        if entropy_threshold.is_nan() || entropy_threshold < 0.0 {
            return Err(Error::invalid(format!(
                "entropy threshold must be non-negative, got {entropy_threshold}"
            )));
        }
        Ok(Self { entropy_threshold })
    }

    /// `S = 0`: every sample runs all layers.
    pub fn full_model() -> Self {
        Self {
            entropy_threshold: 0.0,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.entropy_threshold
    }

    pub fn should_exit(&self, entropy: f64) -> bool {
        entropy < self.entropy_threshold
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub sample_id: usize,
    /// 1-based ramp index the sample exited at.
    pub exit_layer: usize,
    pub entropy: f64,
    pub prediction: usize,
    pub probabilities: Vec<f64>,
    pub layers_executed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

/// A single tokenized sample, unpadded.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    pub input: TokenBatch,
    pub label: usize,
    pub stratum: Option<Stratum>,
}

pub fn encode_samples(examples: &[Example], vocab: &Vocab, max_len: usize) -> Vec<EncodedSample> {
    examples
        .iter()
        .map(|ex| EncodedSample {
            input: encode_batch([ex], vocab, max_len),
            label: ex.label,
            stratum: ex.stratum,
        })
        .collect()
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn check_single(input: &TokenBatch) -> Result<()> {
    if input.batch != 1 {
        return Err(Error::invalid(format!(
            "early-exit inference takes one sample at a time, got a batch of {}",
            input.batch
        )));
    }
    Ok(())
}

fn ramp_distribution(fwd: &mut Forward<'_>, i: usize) -> Result<Vec<f64>> {
    let logits = fwd.ramp(i)?;
    let value = fwd.tape().value(logits);
    Ok(softmax_axis(value.data(), value.shape(), 1))
}

/// Runs one sample until the first ramp whose entropy is below the
/// threshold, or through all `n` layers.
pub fn infer_early_exit(
    model: &EarlyExitModel,
    input: &TokenBatch,
    policy: ExitPolicy,
) -> Result<ExitRecord> {
    check_single(input)?;
    let n = model.n_layers();
    let mut fwd = Forward::new(model, input, None, None)?;
    let mut last = None;
    for i in 1..=n {
        fwd.advance()?;
        let probs = ramp_distribution(&mut fwd, i)?;
        let h = entropy(&probs)?;
        let exits = policy.should_exit(h);
        last = Some((i, h, probs));
        if exits {
            break;
        }
    }
    let (exit_layer, entropy, probabilities) = last.expect("model has at least one layer");
    Ok(ExitRecord {
        sample_id: 0,
        exit_layer,
        entropy,
        prediction: argmax(&probabilities),
        probabilities,
        layers_executed: fwd.depth(),
        label: None,
    })
}

/// Predicts every sample with ramp `layer` alone.
pub fn infer_forced_exit(
    model: &EarlyExitModel,
    samples: &[EncodedSample],
    layer: usize,
) -> Result<Vec<usize>> {
    model.check_depth(layer)?;
    samples
        .iter()
        .map(|s| {
            check_single(&s.input)?;
            let logits = model.forward_prefix(&s.input, layer)?;
            Ok(argmax(&softmax_axis(logits.data(), logits.shape(), 1)))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct BatchRun {
    pub records: Vec<ExitRecord>,
    pub wall_clock: Duration,
    pub layers_executed: u64,
}

/// Early-exit inference over `samples` one at a time, in order.
pub fn infer_batch(
    model: &EarlyExitModel,
    samples: &[EncodedSample],
    policy: ExitPolicy,
) -> Result<BatchRun> {
    let mut records = Vec::with_capacity(samples.len());
    let mut layers_executed = 0u64;
    let start = Instant::now();
    for (id, s) in samples.iter().enumerate() {
        let mut r = infer_early_exit(model, &s.input, policy)?;
        r.sample_id = id;
        r.label = Some(s.label);
        layers_executed += r.layers_executed as u64;
        records.push(r);
    }
    Ok(BatchRun {
        records,
        wall_clock: start.elapsed(),
        layers_executed,
    })
}
