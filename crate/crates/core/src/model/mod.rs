//! Early-exit transformer encoder: embeddings, `n` post-layer-norm encoder
//! layers and one off-ramp classifier after every layer.
//!
//! Parameters live in a single flat list in declaration order (embeddings,
//! then each encoder layer, then each ramp). The same order is used by the
//! checkpoint format and by the backbone / intermediate-ramp partition.

mod checkpoint;
mod config;
mod forward;

pub use checkpoint::{load_model, save_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, N_SEGMENTS};
pub use forward::{pool, Forward};

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use config::INIT_STD;

/// Which training stage owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Embeddings, every encoder layer and the final ramp.
    Backbone,
    /// Ramps `1..n-1`.
    IntermediateRamps,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EmbeddingIdx {
    pub token: usize,
    pub position: usize,
    pub segment: usize,
    pub ln_gain: usize,
    pub ln_bias: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct RampIdx {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub embeddings: EmbeddingIdx,
    pub layers: Vec<LayerIdx>,
    pub ramps: Vec<RampIdx>,
}

/// Declared parameter: name, shape and initializer.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn declare(config: &ModelConfig) -> (Vec<Spec>, Layout) {
    let mut specs = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init| {
        specs.push(Spec { name, shape, init });
        specs.len() - 1
    };
    let (h, f, c) = (config.hidden_size, config.ffn_size, config.n_classes);

    let embeddings = EmbeddingIdx {
        token: add(
            "embeddings.token".into(),
            vec![config.vocab_size, h],
            Init::Normal,
        ),
        position: add(
            "embeddings.position".into(),
            vec![config.max_seq_len, h],
            Init::Normal,
        ),
        segment: add(
            "embeddings.segment".into(),
            vec![N_SEGMENTS, h],
            Init::Normal,
        ),
        ln_gain: add("embeddings.ln.gain".into(), vec![h], Init::Ones),
        ln_bias: add("embeddings.ln.bias".into(), vec![h], Init::Zeros),
    };

    let layers = (0..config.n_layers)
        .map(|l| {
            let mut p = |suffix: &str, shape: Vec<usize>, init| {
                add(format!("layers.{l}.{suffix}"), shape, init)
            };
            LayerIdx {
                wq: p("attn.query.weight", vec![h, h], Init::Normal),
                bq: p("attn.query.bias", vec![h], Init::Zeros),
                wk: p("attn.key.weight", vec![h, h], Init::Normal),
                bk: p("attn.key.bias", vec![h], Init::Zeros),
                wv: p("attn.value.weight", vec![h, h], Init::Normal),
                bv: p("attn.value.bias", vec![h], Init::Zeros),
                wo: p("attn.output.weight", vec![h, h], Init::Normal),
                bo: p("attn.output.bias", vec![h], Init::Zeros),
                ln1_gain: p("attn.ln.gain", vec![h], Init::Ones),
                ln1_bias: p("attn.ln.bias", vec![h], Init::Zeros),
                w1: p("ffn.in.weight", vec![h, f], Init::Normal),
                b1: p("ffn.in.bias", vec![f], Init::Zeros),
                w2: p("ffn.out.weight", vec![f, h], Init::Normal),
                b2: p("ffn.out.bias", vec![h], Init::Zeros),
                ln2_gain: p("ffn.ln.gain", vec![h], Init::Ones),
                ln2_bias: p("ffn.ln.bias", vec![h], Init::Zeros),
            }
        })
        .collect();

    let ramps = (0..config.n_layers)
        .map(|r| RampIdx {
            weight: add(format!("ramps.{}.weight", r + 1), vec![h, c], Init::Normal),
            bias: add(format!("ramps.{}.bias", r + 1), vec![c], Init::Zeros),
        })
        .collect();

    (
        specs,
        Layout {
            embeddings,
            layers,
            ramps,
        },
    )
}

/// Embedding layer + `n` encoder layers + `n` off-ramps.
#[derive(Debug)]
pub struct EarlyExitModel {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    partitions: Vec<Partition>,
    layout: Layout,
    layer_executions: AtomicU64,
}

impl Clone for EarlyExitModel {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.clone(),
            partitions: self.partitions.clone(),
            layout: self.layout.clone(),
            layer_executions: AtomicU64::new(0),
        }
    }
}

impl EarlyExitModel {
    /// Randomly initialized model: weights ~ N(0, 0.02²), biases 0,
    /// layer-norm gains 1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (specs, layout) = declare(&config);
        let params = specs
            .iter()
            .map(|s| match s.init {
                Init::Normal => Tensor::randn(&s.shape, INIT_STD, &mut rng),
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::ones(&s.shape),
            })
            .collect();
        Ok(Self::assemble(config, specs, layout, params))
    }

    /// Builds a model from parameters given in declaration order.
    pub fn from_parameters(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = declare(&config);
        if specs.len() != params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.shape != p.shape() {
                return Err(Error::shape("from_parameters", &s.shape, p.shape()));
            }
        }
        Ok(Self::assemble(config, specs, layout, params))
    }

    fn assemble(
        config: ModelConfig,
        specs: Vec<Spec>,
        layout: Layout,
        params: Vec<Tensor>,
    ) -> Self {
        let n = config.n_layers;
        let mut partitions = vec![Partition::Backbone; specs.len()];
        for ramp in &layout.ramps[..n - 1] {
            partitions[ramp.weight] = Partition::IntermediateRamps;
            partitions[ramp.bias] = Partition::IntermediateRamps;
        }
        Self {
            config,
            names: specs.into_iter().map(|s| s.name).collect(),
            params,
            partitions,
            layout,
            layer_executions: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn num_parameters(&self) -> usize {
        self.params.len()
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.names
    }

    pub fn partition_of(&self, id: usize) -> Partition {
        self.partitions[id]
    }

    /// Ids of every parameter in `partition`, in declaration order.
    pub fn parameter_ids(&self, partition: Partition) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| self.partitions[i] == partition)
            .collect()
    }

    /// Ids of the weight and bias of ramp `i` (1-based).
    pub fn ramp_parameter_ids(&self, i: usize) -> Result<[usize; 2]> {
        self.check_depth(i)?;
        let r = self.layout.ramps[i - 1];
        Ok([r.weight, r.bias])
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Encoder layers executed since construction or the last reset.
    pub fn layer_executions(&self) -> u64 {
        self.layer_executions.load(Ordering::Relaxed)
    }

    pub fn reset_layer_executions(&self) {
        self.layer_executions.store(0, Ordering::Relaxed);
    }

    pub(crate) fn count_layer_execution(&self) {
        self.layer_executions.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn check_depth(&self, depth: usize) -> Result<()> {
        if depth == 0 || depth > self.config.n_layers {
            return Err(Error::invalid(format!(
                "ramp index {depth} out of range 1..={}",
                self.config.n_layers
            )));
        }
        Ok(())
    }

    /// Logits `f_1 .. f_n` of every ramp, each `[batch × n_classes]`.
    pub fn forward_all(&self, input: &TokenBatch) -> Result<Vec<Tensor>> {
        let mut fwd = Forward::new(self, input, None, None)?;
        let mut out = Vec::with_capacity(self.n_layers());
        for i in 1..=self.n_layers() {
            fwd.advance()?;
            let logits = fwd.ramp(i)?;
            out.push(fwd.tape().value(logits).clone());
        }
        Ok(out)
    }

    /// Logits of ramp `depth`, executing only encoder layers `1..=depth`.
    pub fn forward_prefix(&self, input: &TokenBatch, depth: usize) -> Result<Tensor> {
        self.check_depth(depth)?;
        let mut fwd = Forward::new(self, input, None, None)?;
        for _ in 0..depth {
            fwd.advance()?;
        }
        let logits = fwd.ramp(depth)?;
        Ok(fwd.tape().value(logits).clone())
    }
}

/// Padded token ids with attention mask and segment ids, row-major
/// `[batch × seq_len]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub batch: usize,
    pub seq_len: usize,
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
    /// `true` on real tokens, `false` on padding.
    pub mask: Vec<bool>,
}

impl TokenBatch {
    pub fn new(
        batch: usize,
        seq_len: usize,
        ids: Vec<usize>,
        segments: Vec<usize>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let n = batch * seq_len;
        if batch == 0 || seq_len == 0 {
            return Err(Error::invalid("token batch must be non-empty"));
        }
        if ids.len() != n || segments.len() != n || mask.len() != n {
            return Err(Error::shape(
                "token_batch",
                &[batch, seq_len],
                &[ids.len(), segments.len(), mask.len()],
            ));
        }
        Ok(Self {
            batch,
            seq_len,
            ids,
            segments,
            mask,
        })
    }

    /// Stacks equal-length rows.
    pub fn stack<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [usize], &'a [usize], &'a [bool])>,
    {
        let mut ids = Vec::new();
        let mut segments = Vec::new();
        let mut mask = Vec::new();
        let mut batch = 0;
        let mut seq_len = None;
        for (i, s, m) in rows {
            if *seq_len.get_or_insert(i.len()) != i.len() {
                return Err(Error::invalid("rows of a token batch must share a length"));
            }
            ids.extend_from_slice(i);
            segments.extend_from_slice(s);
            mask.extend_from_slice(m);
            batch += 1;
        }
        Self::new(batch, seq_len.unwrap_or(0), ids, segments, mask)
    }

    /// Row `b` as a batch of one.
    pub fn row(&self, b: usize) -> TokenBatch {
        let r = b * self.seq_len..(b + 1) * self.seq_len;
        TokenBatch {
            batch: 1,
            seq_len: self.seq_len,
            ids: self.ids[r.clone()].to_vec(),
            segments: self.segments[r.clone()].to_vec(),
            mask: self.mask[r].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests;
