use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of an early-exit encoder. `n_layers` is both the encoder depth and
/// the number of off-ramps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden_size: usize,
    pub n_heads: usize,
    pub ffn_size: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub n_classes: usize,
    #[serde(default)]
    pub dropout_rate: f64,
}

/// Number of learned segment embeddings (sentence A / sentence B).
pub const N_SEGMENTS: usize = 2;

pub(crate) const LAYER_NORM_EPS: f64 = 1e-12;

pub(crate) const INIT_STD: f64 = 0.02;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            hidden_size: 32,
            n_heads: 2,
            ffn_size: 64,
            vocab_size: 64,
            max_seq_len: 24,
            n_classes: 2,
            dropout_rate: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("hidden_size", self.hidden_size),
            ("n_heads", self.n_heads),
            ("ffn_size", self.ffn_size),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(Error::Config {
                    field,
                    reason: "must be at least 1".into(),
                });
            }
        }
        if self.n_classes < 2 {
            return Err(Error::Config {
                field: "n_classes",
                reason: format!("must be at least 2, got {}", self.n_classes),
            });
        }
        if !self.hidden_size.is_multiple_of(self.n_heads) {
            return Err(Error::Config {
                field: "n_heads",
                reason: format!(
                    "hidden_size {} is not divisible by n_heads {}",
                    self.hidden_size, self.n_heads
                ),
            });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config {
                field: "dropout_rate",
                reason: format!("must be in [0, 1), got {}", self.dropout_rate),
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.n_heads
    }
}
