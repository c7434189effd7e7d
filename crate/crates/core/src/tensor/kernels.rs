//! Raw slice kernels. Both the eager functions and the tape call into these,
//! so taped and untaped forward passes are bit-identical.

use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        ([m, k], [k2, p]) if k == k2 => Ok((*m, *k, *p)),
        _ => Err(Error::shape("matmul", a, b)),
    }
}

/// `out[m×p] = a[m×k] · b[k×p]`
pub fn mm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    mm_acc(a, b, out, m, k, p);
}

/// `out[m×p] += a[m×k] · b[k×p]`
pub fn mm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for l in 0..k {
            let av = a[i * k + l];
            let brow = &b[l * p..(l + 1) * p];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×p] += a[m×k] · b[p×k]ᵀ`
pub fn mm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..p {
            let brow = &b[j * k..(j + 1) * k];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * p + j] += dot;
        }
    }
}

/// `out[m×p] += a[k×m]ᵀ · b[k×p]`
pub fn mm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    for l in 0..k {
        let brow = &b[l * p..(l + 1) * p];
        for i in 0..m {
            let av = a[l * m + i];
            let row = &mut out[i * p..(i + 1) * p];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×p] = a[m×k] · b[p×k]ᵀ`
pub fn mm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    mm_nt_acc(a, b, out, m, k, p);
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_axis(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_extents(shape, axis);
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let max = (0..len)
                .map(|j| x[idx(j)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..len {
                let e = (x[idx(j)] - max).exp();
                y[idx(j)] = e;
                sum += e;
            }
            for j in 0..len {
                y[idx(j)] /= sum;
            }
        }
    }
    y
}

/// `dx = y ⊙ (g − Σ_axis g⊙y)`
pub fn softmax_axis_backward(y: &[f64], g: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_extents(shape, axis);
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
            for j in 0..len {
                dx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
            }
        }
    }
    dx
}

/// Returns `(y, x_hat, inv_std per row)`.
pub fn layer_norm(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    d: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        inv[r] = inv_std;
        for j in 0..d {
            let h = (row[j] - mean) * inv_std;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (y, xhat, inv)
}

pub fn gelu(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Mean cross-entropy; also returns the row-wise softmax for the backward pass.
pub fn cross_entropy(logits: &[f64], shape: &[usize], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (batch, classes) = match shape {
        [b, c] => (*b, *c),
        _ => return Err(Error::shape("cross_entropy", shape, &[labels.len()])),
    };
    if labels.len() != batch {
        return Err(Error::shape("cross_entropy", shape, &[labels.len()]));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let probs = softmax_axis(logits, shape, 1);
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok((total / batch as f64, probs))
}
