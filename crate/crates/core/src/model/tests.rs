use super::*;
use crate::tensor::softmax;

fn small_config() -> ModelConfig {
    ModelConfig {
        n_layers: 4,
        hidden_size: 8,
        n_heads: 2,
        ffn_size: 16,
        vocab_size: 20,
        max_seq_len: 10,
        n_classes: 3,
        dropout_rate: 0.0,
    }
}

fn batch_of(rows: &[&[usize]], seq_len: usize) -> TokenBatch {
    let mut ids = Vec::new();
    let mut mask = Vec::new();
    for r in rows {
        for j in 0..seq_len {
            ids.push(r.get(j).copied().unwrap_or(0));
            mask.push(j < r.len());
        }
    }
    let segments = vec![0; ids.len()];
    TokenBatch::new(rows.len(), seq_len, ids, segments, mask).unwrap()
}

#[test]
fn forward_all_returns_one_logit_tensor_per_layer() {
    let model = EarlyExitModel::new(small_config(), 1).unwrap();
    let input = batch_of(&[&[2, 5, 7], &[2, 9]], 6);
    let out = model.forward_all(&input).unwrap();
    assert_eq!(out.len(), 4);
    for logits in &out {
        assert_eq!(logits.shape(), &[2, 3]);
    }
}

#[test]
fn fresh_model_outputs_are_finite_with_bounded_entropy() {
    let model = EarlyExitModel::new(small_config(), 7).unwrap();
    let input = batch_of(&[&[2, 5, 7, 11], &[2, 9], &[2, 3, 3, 3, 3]], 8);
    for logits in model.forward_all(&input).unwrap() {
        assert!(logits.is_finite());
        let probs = softmax(&logits, 1).unwrap();
        for row in probs.data().chunks(3) {
            let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum();
            assert!(h >= 0.0 && h <= 3f64.ln() + 1e-12);
        }
    }
}

#[test]
fn batch_permutation_permutes_outputs() {
    let model = EarlyExitModel::new(small_config(), 3).unwrap();
    let rows: [&[usize]; 3] = [&[2, 5, 7], &[2, 9, 1, 4], &[2, 6]];
    let a = model.forward_all(&batch_of(&rows, 6)).unwrap();
    let permuted = [rows[2], rows[0], rows[1]];
    let b = model.forward_all(&batch_of(&permuted, 6)).unwrap();
    let perm = [2, 0, 1];
    for (la, lb) in a.iter().zip(&b) {
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(
                lb.data()[dst * 3..dst * 3 + 3],
                la.data()[src * 3..src * 3 + 3]
            );
        }
    }
}

#[test]
fn prefix_matches_forward_all_bit_for_bit() {
    let model = EarlyExitModel::new(small_config(), 11).unwrap();
    let input = batch_of(&[&[2, 5, 7], &[2, 9, 4, 4, 8]], 7);
    let all = model.forward_all(&input).unwrap();
    for depth in 1..=4 {
        let prefix = model.forward_prefix(&input, depth).unwrap();
        assert_eq!(prefix.data(), all[depth - 1].data(), "depth {depth}");
    }
}

#[test]
fn prefix_executes_exactly_depth_layers() {
    let model = EarlyExitModel::new(small_config(), 11).unwrap();
    let input = batch_of(&[&[2, 5, 7]], 4);
    for depth in 1..=4 {
        model.reset_layer_executions();
        model.forward_prefix(&input, depth).unwrap();
        assert_eq!(model.layer_executions(), depth as u64);
    }
    model.reset_layer_executions();
    model.forward_all(&input).unwrap();
    assert_eq!(model.layer_executions(), 4);
}

#[test]
fn prefix_depth_out_of_range_is_rejected() {
    let model = EarlyExitModel::new(small_config(), 0).unwrap();
    let input = batch_of(&[&[2, 5]], 3);
    assert!(model.forward_prefix(&input, 0).is_err());
    assert!(model.forward_prefix(&input, 5).is_err());
}

#[test]
fn overlong_sequence_is_rejected() {
    let model = EarlyExitModel::new(small_config(), 0).unwrap();
    let input = batch_of(&[&[2, 5]], 11);
    assert!(model.forward_all(&input).is_err());
}

#[test]
fn appended_padding_does_not_change_logits() {
    let model = EarlyExitModel::new(small_config(), 5).unwrap();
    let short = model.forward_all(&batch_of(&[&[2, 5, 7, 3]], 4)).unwrap();
    let padded = model.forward_all(&batch_of(&[&[2, 5, 7, 3]], 10)).unwrap();
    for (a, b) in short.iter().zip(&padded) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn pool_takes_first_token() {
    let data: Vec<f64> = (0..3 * 4 * 2).map(|v| v as f64).collect();
    let hidden = Tensor::new(&[3, 4, 2], data.clone()).unwrap();
    let pooled = pool(&hidden).unwrap();
    assert_eq!(pooled.shape(), &[3, 2]);
    for b in 0..3 {
        assert_eq!(pooled.data()[b * 2..b * 2 + 2], data[b * 8..b * 8 + 2]);
    }

    let mut altered = data.clone();
    for b in 0..3 {
        for s in 1..4 {
            altered[b * 8 + s * 2] = -99.0;
        }
    }
    let altered = pool(&Tensor::new(&[3, 4, 2], altered).unwrap()).unwrap();
    assert_eq!(altered.data(), pooled.data());

    let single = Tensor::new(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    assert_eq!(pool(&single).unwrap().data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn partition_covers_every_parameter_once() {
    let model = EarlyExitModel::new(small_config(), 0).unwrap();
    let backbone = model.parameter_ids(Partition::Backbone);
    let ramps = model.parameter_ids(Partition::IntermediateRamps);
    let mut all: Vec<usize> = backbone.iter().chain(&ramps).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..model.num_parameters()).collect::<Vec<_>>());

    // ramps 1..n-1 are intermediate, ramp n is the backbone's classifier
    assert_eq!(ramps.len(), 2 * 3);
    for i in 1..4 {
        for id in model.ramp_parameter_ids(i).unwrap() {
            assert_eq!(model.partition_of(id), Partition::IntermediateRamps);
        }
    }
    for id in model.ramp_parameter_ids(4).unwrap() {
        assert_eq!(model.partition_of(id), Partition::Backbone);
    }
}

#[test]
fn same_seed_same_parameters() {
    let a = EarlyExitModel::new(small_config(), 42).unwrap();
    let b = EarlyExitModel::new(small_config(), 42).unwrap();
    let c = EarlyExitModel::new(small_config(), 43).unwrap();
    assert_eq!(a.parameters(), b.parameters());
    assert_ne!(a.parameters(), c.parameters());
}

mod checkpoint_io {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = EarlyExitModel::new(small_config(), 9).unwrap();
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.config(), model.config());
        assert_eq!(loaded.parameters(), model.parameters());

        let input = batch_of(&[&[2, 5, 7], &[2, 1]], 5);
        assert_eq!(
            model.forward_all(&input).unwrap(),
            loaded.forward_all(&input).unwrap()
        );
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_model(&EarlyExitModel::new(small_config(), 9).unwrap(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = load_model(&path).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn version_mismatch_and_truncation_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_model(&EarlyExitModel::new(small_config(), 9).unwrap(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut wrong_version = bytes.clone();
        wrong_version[8..12].copy_from_slice(&7u32.to_le_bytes());
        std::fs::write(&path, &wrong_version).unwrap();
        let err = load_model(&path).unwrap_err().to_string();
        assert!(err.contains("version 7"), "{err}");

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_model(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        std::fs::write(&path, &bytes[..20]).unwrap();
        let err = load_model(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn loaded_model_uses_its_own_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let config = ModelConfig {
            n_layers: 2,
            ..small_config()
        };
        save_model(&EarlyExitModel::new(config, 1).unwrap(), &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.n_layers(), 2);
        let out = loaded.forward_all(&batch_of(&[&[2, 3]], 3)).unwrap();
        assert_eq!(out.len(), 2);
    }
}
