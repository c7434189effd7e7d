//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use early_exit::data::{make_synthetic_task, Dataset, SyntheticSpec, Vocab};
use early_exit::model::{EarlyExitModel, ModelConfig};
use early_exit::tensor::{Tape, Tensor, Var};
use early_exit::training::{stage_one, stage_two, StageReport, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const FD_STEP: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-4;

/// Finite-difference comparison result for one op.
#[derive(Debug)]
pub struct GradCheck {
    pub name: String,
    pub trials: usize,
    pub checked: usize,
    pub worst_rel: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.worst_rel <= FD_RTOL
    }
}

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| normal.sample(rng)).collect()).unwrap()
}

/// `|a − n| / max(|a|, |n|, 1e-3)`: relative, with a floor for entries near zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Builds `f` on a tape and reduces any non-scalar output with fixed random
/// weights so every output element contributes to the checked scalar.
fn scalar_loss<F>(inputs: &[Tensor], weights: &[f64], f: &F, tape: &mut Tape) -> (Vec<Var>, Var)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t, true)).collect();
    let out = f(tape, &vars);
    if tape.value(out).is_scalar() {
        return (vars, out);
    }
    let shape = tape.shape(out).to_vec();
    let w =
        tape.constant(Tensor::new(&shape, weights[..tape.value(out).numel()].to_vec()).unwrap());
    let prod = tape.mul(out, w).unwrap();
    (vars, tape.sum(prod).unwrap())
}

/// Central differences against the tape's reverse pass, on `trials` random
/// draws of inputs with the given shapes.
pub fn check_op<F>(name: &str, shapes: &[&[usize]], trials: usize, seed: u64, f: F) -> GradCheck
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    check_op_with(
        name,
        trials,
        seed,
        |rng| shapes.iter().map(|s| randn(s, rng)).collect(),
        f,
    )
}

pub fn check_op_with<G, F>(name: &str, trials: usize, seed: u64, draw: G, f: F) -> GradCheck
where
    G: Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..trials {
        let inputs = draw(&mut rng);
        let weights: Vec<f64> = randn(&[4096], &mut rng).into_data();
        let mut tape = Tape::new();
        let (vars, loss) = scalar_loss(&inputs, &weights, &f, &mut tape);
        tape.backward(loss).unwrap();
        for (k, v) in vars.iter().enumerate() {
            let analytic = tape.grad(*v).unwrap().to_vec();
            for (j, &a) in analytic.iter().enumerate() {
                let eval = |delta: f64| {
                    let mut moved = inputs.clone();
                    moved[k].data_mut()[j] += delta;
                    let mut t = Tape::new();
                    let (_, l) = scalar_loss(&moved, &weights, &f, &mut t);
                    t.value(l).item()
                };
                let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(a, numeric));
                checked += 1;
            }
        }
    }
    GradCheck {
        name: name.to_string(),
        trials,
        checked,
        worst_rel: worst,
    }
}

/// Every differentiable tape operation, each on `trials` random inputs.
pub fn all_op_checks(trials: usize) -> Vec<GradCheck> {
    let labels = [2usize, 0, 1, 1];
    vec![
        check_op("matmul", &[&[3, 4], &[4, 2]], trials, 1, |t, v| {
            t.matmul(v[0], v[1]).unwrap()
        }),
        check_op(
            "batch_matmul",
            &[&[2, 3, 4], &[2, 4, 2]],
            trials,
            2,
            |t, v| t.batch_matmul(v[0], v[1], false).unwrap(),
        ),
        check_op(
            "batch_matmul_transposed",
            &[&[2, 3, 4], &[2, 5, 4]],
            trials,
            3,
            |t, v| t.batch_matmul(v[0], v[1], true).unwrap(),
        ),
        check_op("add", &[&[3, 4], &[3, 4]], trials, 4, |t, v| {
            t.add(v[0], v[1]).unwrap()
        }),
        check_op("mul", &[&[3, 4], &[3, 4]], trials, 5, |t, v| {
            t.mul(v[0], v[1]).unwrap()
        }),
        check_op("add_bias", &[&[3, 4], &[4]], trials, 6, |t, v| {
            t.add_bias(v[0], v[1]).unwrap()
        }),
        check_op("add_const", &[&[2, 3]], trials, 7, |t, v| {
            t.add_const(v[0], &[1.0, -2.0, 0.5, 3.0, 0.0, -1.0])
                .unwrap()
        }),
        check_op("scale", &[&[2, 5]], trials, 8, |t, v| {
            t.scale(v[0], -1.7).unwrap()
        }),
        check_op("gelu", &[&[3, 5]], trials, 9, |t, v| t.gelu(v[0]).unwrap()),
        check_op("softmax_last_axis", &[&[3, 4]], trials, 10, |t, v| {
            t.softmax(v[0], 1).unwrap()
        }),
        check_op("softmax_first_axis", &[&[3, 4]], trials, 11, |t, v| {
            t.softmax(v[0], 0).unwrap()
        }),
        check_op("softmax_3d", &[&[2, 3, 4]], trials, 12, |t, v| {
            t.softmax(v[0], 2).unwrap()
        }),
        check_op("layer_norm", &[&[2, 8], &[8], &[8]], trials, 13, |t, v| {
            t.layer_norm(v[0], v[1], v[2], 1e-12).unwrap()
        }),
        check_op("gather_rows", &[&[4, 3]], trials, 14, |t, v| {
            t.gather_rows(v[0], &[2, 0, 2]).unwrap()
        }),
        check_op("reshape", &[&[2, 6]], trials, 15, |t, v| {
            t.reshape(v[0], &[3, 4]).unwrap()
        }),
        check_op("split_heads", &[&[6, 4]], trials, 16, |t, v| {
            t.split_heads(v[0], 2, 3, 2).unwrap()
        }),
        check_op("merge_heads", &[&[4, 3, 2]], trials, 17, |t, v| {
            t.merge_heads(v[0], 2, 3, 2).unwrap()
        }),
        check_op("dropout", &[&[2, 4]], trials, 18, |t, v| {
            t.dropout(v[0], vec![2.0, 0.0, 2.0, 2.0, 0.0, 0.0, 2.0, 2.0])
                .unwrap()
        }),
        check_op("sum", &[&[3, 4]], trials, 19, |t, v| t.sum(v[0]).unwrap()),
        check_op("mean", &[&[3, 4]], trials, 20, |t, v| t.mean(v[0]).unwrap()),
        check_op("cross_entropy", &[&[4, 3]], trials, 21, move |t, v| {
            t.cross_entropy(v[0], &labels).unwrap()
        }),
        composite_mlp_check(trials),
    ]
}

/// Two-layer GELU network with cross-entropy, all parameters checked at once.
pub fn composite_mlp_check(trials: usize) -> GradCheck {
    let labels = [0usize, 2, 1, 2];
    check_op_with(
        "composite_mlp",
        trials,
        22,
        |rng| {
            vec![
                randn(&[4, 5], rng),
                randn(&[5, 6], rng),
                randn(&[6], rng),
                randn(&[6, 3], rng),
                randn(&[3], rng),
            ]
        },
        move |t, v| {
            let h = t.matmul(v[0], v[1]).unwrap();
            let h = t.add_bias(h, v[2]).unwrap();
            let h = t.gelu(h).unwrap();
            let z = t.matmul(h, v[3]).unwrap();
            let z = t.add_bias(z, v[4]).unwrap();
            t.cross_entropy(z, &labels).unwrap()
        },
    )
}

/// Mean cross-entropy by the log-sum-exp identity.
pub fn cross_entropy_oracle(logits: &[f64], n_classes: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.chunks(n_classes).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

/// The desk-scale setup: synthetic task, 4 layers, hidden 32, seed 42.
pub struct DeskRun {
    pub data: Dataset,
    pub vocab: Vocab,
    pub stage1_model: EarlyExitModel,
    pub model: EarlyExitModel,
    pub initial: EarlyExitModel,
    pub reports: [StageReport; 2],
    pub train_seconds: f64,
}

pub fn desk_model_config(spec: &SyntheticSpec, vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        n_layers: 4,
        hidden_size: 32,
        n_heads: 2,
        ffn_size: 64,
        vocab_size: vocab.len(),
        max_seq_len: spec.max_seq_len(),
        n_classes: spec.n_classes,
        dropout_rate: 0.0,
    }
}

pub fn desk_run() -> DeskRun {
    let seed = 42;
    let start = std::time::Instant::now();
    let spec = SyntheticSpec::default();
    let data = make_synthetic_task(&spec, seed).unwrap();
    let vocab = data.vocab();
    let initial = EarlyExitModel::new(desk_model_config(&spec, &vocab), seed).unwrap();
    let train = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let mut model = initial.clone();
    let r1 = stage_one(&mut model, &data.train, &vocab, &train).unwrap();
    let stage1_model = model.clone();
    let r2 = stage_two(&mut model, &data.train, &vocab, &train).unwrap();
    DeskRun {
        data,
        vocab,
        stage1_model,
        model,
        initial,
        reports: [r1, r2],
        train_seconds: start.elapsed().as_secs_f64(),
    }
}
