use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::LAYER_NORM_EPS;
use super::{EarlyExitModel, Partition, TokenBatch, N_SEGMENTS};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Additive score for padded keys; `exp` of it underflows to exactly 0.
const MASKED_SCORE: f64 = -1e9;

/// First-token pooling of `hidden [batch × seq × hidden]`.
pub fn pool(hidden: &Tensor) -> Result<Tensor> {
    let (b, s, h) = match hidden.shape() {
        [b, s, h] => (*b, *s, *h),
        other => return Err(Error::shape("pool", other, &[0, 0, 0])),
    };
    let data = hidden.data();
    let out = (0..b)
        .flat_map(|row| data[row * s * h..row * s * h + h].iter().copied())
        .collect();
    Tensor::new(&[b, h], out)
}

/// An in-progress forward pass that runs encoder layers one at a time.
///
/// Parameters are bound onto the tape lazily, so executing `i` layers
/// touches only the embeddings and those `i` layers (plus any ramp that is
/// evaluated). When `trainable` is set, parameters in that partition are
/// recorded as differentiable leaves; everything else is a constant.
pub struct Forward<'m> {
    model: &'m EarlyExitModel,
    tape: Tape,
    bound: Vec<Option<Var>>,
    trainable: Option<Partition>,
    dropout: Option<ChaCha8Rng>,
    batch: usize,
    seq: usize,
    attn_mask: Vec<f64>,
    /// `hiddens[0]` is the embedding output, `hiddens[i]` the output of layer `i`.
    hiddens: Vec<Var>,
}

impl<'m> Forward<'m> {
    pub fn new(
        model: &'m EarlyExitModel,
        input: &TokenBatch,
        trainable: Option<Partition>,
        dropout: Option<ChaCha8Rng>,
    ) -> Result<Self> {
        let cfg = model.config();
        if input.seq_len > cfg.max_seq_len {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds max_seq_len {}",
                input.seq_len, cfg.max_seq_len
            )));
        }
        if let Some(bad) = input.ids.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} out of range for vocab size {}",
                cfg.vocab_size
            )));
        }
        if input.segments.iter().any(|&s| s >= N_SEGMENTS) {
            return Err(Error::invalid("segment ids must be 0 or 1"));
        }

        let (batch, seq, heads) = (input.batch, input.seq_len, cfg.n_heads);
        let mut attn_mask = Vec::with_capacity(batch * heads * seq * seq);
        for b in 0..batch {
            let keys = &input.mask[b * seq..(b + 1) * seq];
            for _ in 0..heads * seq {
                attn_mask.extend(
                    keys.iter()
                        .map(|&real| if real { 0.0 } else { MASKED_SCORE }),
                );
            }
        }

        let mut fwd = Self {
            model,
            tape: Tape::new(),
            bound: vec![None; model.num_parameters()],
            trainable,
            dropout: dropout.filter(|_| cfg.dropout_rate > 0.0),
            batch,
            seq,
            attn_mask,
            hiddens: Vec::with_capacity(cfg.n_layers + 1),
        };
        let h = fwd.embed(input)?;
        fwd.hiddens.push(h);
        Ok(fwd)
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }

    /// Number of encoder layers executed so far.
    pub fn depth(&self) -> usize {
        self.hiddens.len() - 1
    }

    /// `(parameter id, tape var)` for every parameter bound so far.
    pub fn bound_parameters(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
    }

    /// Hidden states after layer `depth`, `[batch·seq × hidden]`.
    pub fn hidden(&self, depth: usize) -> Option<Var> {
        self.hiddens.get(depth).copied()
    }

    fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.bound[id] {
            return v;
        }
        let trainable = self.trainable == Some(self.model.partition_of(id));
        let v = self.tape.param(&self.model.parameters()[id], trainable);
        self.bound[id] = Some(v);
        v
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some(rng) = self.dropout.as_mut() else {
            return Ok(x);
        };
        let p = self.model.config().dropout_rate;
        let keep = 1.0 / (1.0 - p);
        let mask = (0..self.tape.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.tape.dropout(x, mask)
    }

    fn linear(&mut self, x: Var, weight: usize, bias: usize) -> Result<Var> {
        let (w, b) = (self.param(weight), self.param(bias));
        let y = self.tape.matmul(x, w)?;
        self.tape.add_bias(y, b)
    }

    fn embed(&mut self, input: &TokenBatch) -> Result<Var> {
        let e = self.model.layout().embeddings;
        let positions: Vec<usize> = (0..input.batch).flat_map(|_| 0..input.seq_len).collect();

        let tok_table = self.param(e.token);
        let tok = self.tape.gather_rows(tok_table, &input.ids)?;
        let pos_table = self.param(e.position);
        let pos = self.tape.gather_rows(pos_table, &positions)?;
        let seg_table = self.param(e.segment);
        let seg = self.tape.gather_rows(seg_table, &input.segments)?;

        let sum = self.tape.add(tok, pos)?;
        let sum = self.tape.add(sum, seg)?;
        let (g, b) = (self.param(e.ln_gain), self.param(e.ln_bias));
        let h = self.tape.layer_norm(sum, g, b, LAYER_NORM_EPS)?;
        self.dropout(h)
    }

    /// Runs the next encoder layer.
    pub fn advance(&mut self) -> Result<()> {
        let l = self.depth();
        if l >= self.model.n_layers() {
            return Err(Error::invalid("all encoder layers already executed"));
        }
        let idx = self.model.layout().layers[l];
        let cfg = self.model.config();
        let (batch, seq, heads) = (self.batch, self.seq, cfg.n_heads);
        let x = self.hiddens[l];

        let q = self.linear(x, idx.wq, idx.bq)?;
        let k = self.linear(x, idx.wk, idx.bk)?;
        let v = self.linear(x, idx.wv, idx.bv)?;
        let q = self.tape.split_heads(q, batch, seq, heads)?;
        let k = self.tape.split_heads(k, batch, seq, heads)?;
        let v = self.tape.split_heads(v, batch, seq, heads)?;

        let scores = self.tape.batch_matmul(q, k, true)?;
        let scores = self
            .tape
            .scale(scores, 1.0 / (cfg.head_dim() as f64).sqrt())?;
        let scores = self.tape.add_const(scores, &self.attn_mask)?;
        let probs = self.tape.softmax(scores, 2)?;
        let ctx = self.tape.batch_matmul(probs, v, false)?;
        let ctx = self.tape.merge_heads(ctx, batch, seq, heads)?;

        let attn = self.linear(ctx, idx.wo, idx.bo)?;
        let attn = self.dropout(attn)?;
        let res = self.tape.add(x, attn)?;
        let (g, b) = (self.param(idx.ln1_gain), self.param(idx.ln1_bias));
        let h1 = self.tape.layer_norm(res, g, b, LAYER_NORM_EPS)?;

        let f = self.linear(h1, idx.w1, idx.b1)?;
        let f = self.tape.gelu(f)?;
        let f = self.linear(f, idx.w2, idx.b2)?;
        let f = self.dropout(f)?;
        let res = self.tape.add(h1, f)?;
        let (g, b) = (self.param(idx.ln2_gain), self.param(idx.ln2_bias));
        let out = self.tape.layer_norm(res, g, b, LAYER_NORM_EPS)?;

        self.hiddens.push(out);
        self.model.count_layer_execution();
        Ok(())
    }

    /// Logits `[batch × n_classes]` of ramp `i`, which reads the pooled
    /// output of layer `i`. Layer `i` must already have been executed.
    pub fn ramp(&mut self, i: usize) -> Result<Var> {
        self.model.check_depth(i)?;
        if i > self.depth() {
            return Err(Error::invalid(format!(
                "ramp {i} requested after only {} layers",
                self.depth()
            )));
        }
        let h = self.hiddens[i];
        let first_tokens: Vec<usize> = (0..self.batch).map(|b| b * self.seq).collect();
        let pooled = self.tape.gather_rows(h, &first_tokens)?;
        let r = self.model.layout().ramps[i - 1];
        self.linear(pooled, r.weight, r.bias)
    }
}
