//! Binary checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes   "EEXCKPT\0"
//! version      u32       CHECKPOINT_VERSION
//! n_layers     u64
//! hidden_size  u64
//! n_heads      u64
//! ffn_size     u64
//! vocab_size   u64
//! max_seq_len  u64
//! n_classes    u64
//! dropout_rate f64
//! parameters   f64 × Σ numel, in declaration order
//! ```
//!
//! Parameter shapes are implied by the config, so the file length is fully
//! determined by the header.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{declare, EarlyExitModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"EEXCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 7 * 8 + 8;

pub fn save_model(model: &EarlyExitModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let c = model.config();
    let total: usize = model.parameters().iter().map(Tensor::numel).sum();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * total);
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        c.n_layers,
        c.hidden_size,
        c.n_heads,
        c.ffn_size,
        c.vocab_size,
        c.max_seq_len,
        c.n_classes,
    ] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.extend_from_slice(&c.dropout_rate.to_le_bytes());
    for p in model.parameters() {
        for v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    file.sync_all()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EarlyExitModel> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };

    if bytes.len() < HEADER_LEN {
        return Err(fail(format!(
            "truncated header: {} bytes, need {HEADER_LEN}",
            bytes.len()
        )));
    }
    if bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic bytes, not an early-exit checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!(
            "unsupported format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }

    let mut cursor = 12;
    let mut next_u64 = || {
        let v = u64::from_le_bytes(bytes[cursor..cursor + 8].try_into().unwrap());
        cursor += 8;
        v as usize
    };
    let mut config = ModelConfig {
        n_layers: next_u64(),
        hidden_size: next_u64(),
        n_heads: next_u64(),
        ffn_size: next_u64(),
        vocab_size: next_u64(),
        max_seq_len: next_u64(),
        n_classes: next_u64(),
        dropout_rate: 0.0,
    };
    config.dropout_rate = f64::from_le_bytes(bytes[cursor..cursor + 8].try_into().unwrap());
    cursor += 8;
    config
        .validate()
        .map_err(|e| fail(format!("invalid config in header: {e}")))?;

    let (specs, _) = declare(&config);
    let total: usize = specs
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum();
    let expected = HEADER_LEN + 8 * total;
    if bytes.len() < expected {
        return Err(fail(format!(
            "truncated parameters: {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(fail(format!(
            "{} trailing bytes after parameters",
            bytes.len() - expected
        )));
    }

    let mut params = Vec::with_capacity(specs.len());
    for spec in &specs {
        let numel: usize = spec.shape.iter().product();
        let data = bytes[cursor..cursor + 8 * numel]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cursor += 8 * numel;
        params.push(Tensor::new(&spec.shape, data)?);
    }
    EarlyExitModel::from_parameters(config, params)
}
