use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `[G×m×k] · [G×k×p]`, or `[G×m×k] · [G×p×k]ᵀ` when `trans_b`.
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        src: Var,
        rows: Vec<usize>,
    },
    Reshape(Var),
    SplitHeads {
        x: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient, kept only for leaves.
    grad: Option<Vec<f64>>,
}

/// Append-only record of a forward computation. Inputs always precede the
/// operations that consume them, so a reverse scan is a valid topological
/// order for the backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. It participates in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        let mut value = tensor.clone();
        value.zero_grad();
        self.push_node(value, Op::Leaf, requires_grad)
    }

    /// Records a parameter as a leaf, trainable or not.
    pub fn param(&mut self, tensor: &Tensor, trainable: bool) -> Var {
        let mut value = Tensor::new(tensor.shape(), tensor.data().to_vec()).expect("valid tensor");
        value.set_requires_grad(trainable);
        self.push_node(value, Op::Leaf, trainable)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push_node(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated on a leaf by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: &[usize], data: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let value = Tensor::new(shape, data)?;
        Ok(self.push_node(value, op, requires_grad))
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, p) = kernels::matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![0.0; m * p];
        kernels::mm(self.data(a), self.data(b), &mut out, m, k, p);
        self.push(&[m, p], out, Op::MatMul(a, b), &[a, b])
    }

    /// Batched product over the leading axis; with `trans_b` the second
    /// operand is `[G×p×k]` and used transposed.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (g, m, k, p) = match (sa.as_slice(), sb.as_slice()) {
            ([g, m, k], [g2, k2, p]) if !trans_b && g == g2 && k == k2 => (*g, *m, *k, *p),
            ([g, m, k], [g2, p, k2]) if trans_b && g == g2 && k == k2 => (*g, *m, *k, *p),
            _ => return Err(Error::shape("batch_matmul", &sa, &sb)),
        };
        let mut out = vec![0.0; g * m * p];
        let (ad, bd) = (self.data(a), self.data(b));
        for gi in 0..g {
            let a_blk = &ad[gi * m * k..(gi + 1) * m * k];
            let b_blk = &bd[gi * k * p..(gi + 1) * k * p];
            let o_blk = &mut out[gi * m * p..(gi + 1) * m * p];
            if trans_b {
                kernels::mm_nt(a_blk, b_blk, o_blk, m, k, p);
            } else {
                kernels::mm(a_blk, b_blk, o_blk, m, k, p);
            }
        }
        self.push(&[g, m, p], out, Op::BatchMatMul { a, b, trans_b }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(&shape, out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(&shape, out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().expect("non-empty shape");
        if self.value(bias).numel() != d {
            return Err(Error::shape("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.data(bias);
        let out = self
            .data(x)
            .chunks(d)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(&shape, out, Op::AddBias(x, bias), &[x, bias])
    }

    /// Adds a non-differentiable tensor of the same shape (e.g. an attention mask).
    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        if self.value(x).numel() != c.len() {
            return Err(Error::shape("add_const", self.shape(x), &[c.len()]));
        }
        let out = self.data(x).iter().zip(c).map(|(x, y)| x + y).collect();
        let shape = self.shape(x).to_vec();
        self.push(&shape, out, Op::AddConst(x), &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.data(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push(&shape, out, Op::Scale(x, factor), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| kernels::gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(&shape, out, Op::Gelu(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let out = kernels::softmax_axis(self.data(x), &shape, axis);
        self.push(&shape, out, Op::Softmax { x, axis }, &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("non-empty shape");
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::shape("layer_norm", &shape, self.shape(gain)));
        }
        let (y, xhat, inv_std) =
            kernels::layer_norm(self.data(x), self.data(gain), self.data(bias), d, eps);
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        self.push(&shape, y, op, &[x, gain, bias])
    }

    /// Selects rows of a 2-D tensor; indices may repeat (embedding lookup).
    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let (n, d) = match self.shape(src) {
            [n, d] => (*n, *d),
            s => return Err(Error::shape("gather_rows", s, &[rows.len()])),
        };
        if let Some(bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::invalid(format!(
                "row index {bad} out of range for {n} rows"
            )));
        }
        if rows.is_empty() {
            return Err(Error::invalid("gather_rows with no indices"));
        }
        let sd = self.data(src);
        let out = rows
            .iter()
            .flat_map(|&r| sd[r * d..(r + 1) * d].iter().copied())
            .collect();
        self.push(
            &[rows.len(), d],
            out,
            Op::GatherRows {
                src,
                rows: rows.to_vec(),
            },
            &[src],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let out = self.data(x).to_vec();
        self.push(shape, out, Op::Reshape(x), &[x])
    }

    /// `[B·S × H] → [B·heads × S × H/heads]`
    pub fn split_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let hidden = match shape.as_slice() {
            [r, h] if *r == batch * seq && h % heads == 0 => *h,
            _ => return Err(Error::shape("split_heads", &shape, &[batch, seq, heads])),
        };
        let dh = hidden / heads;
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        for b in 0..batch {
            for s in 0..seq {
                for h in 0..heads {
                    let src = (b * seq + s) * hidden + h * dh;
                    let dst = ((b * heads + h) * seq + s) * dh;
                    out[dst..dst + dh].copy_from_slice(&xd[src..src + dh]);
                }
            }
        }
        let op = Op::SplitHeads {
            x,
            batch,
            seq,
            heads,
        };
        self.push(&[batch * heads, seq, dh], out, op, &[x])
    }

    /// Inverse of [`Tape::split_heads`].
    pub fn merge_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let dh = match shape.as_slice() {
            [g, s, dh] if *g == batch * heads && *s == seq => *dh,
            _ => return Err(Error::shape("merge_heads", &shape, &[batch, seq, heads])),
        };
        let hidden = dh * heads;
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        for b in 0..batch {
            for s in 0..seq {
                for h in 0..heads {
                    let dst = (b * seq + s) * hidden + h * dh;
                    let src = ((b * heads + h) * seq + s) * dh;
                    out[dst..dst + dh].copy_from_slice(&xd[src..src + dh]);
                }
            }
        }
        let op = Op::MergeHeads {
            x,
            batch,
            seq,
            heads,
        };
        self.push(&[batch * seq, hidden], out, op, &[x])
    }

    /// Multiplies by a fixed mask (entries 0 or 1/(1-p)).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::shape("dropout", self.shape(x), &[mask.len()]));
        }
        let out = self.data(x).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.shape(x).to_vec();
        self.push(&shape, out, Op::Dropout { x, mask }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        self.push(&[1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(&[1], vec![s], Op::Mean(x), &[x])
    }

    /// Batch-mean cross-entropy of `logits [batch×classes]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let (loss, probs) = kernels::cross_entropy(self.data(logits), &shape, labels)?;
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.push(&[1], vec![loss], op, &[logits])
    }

    /// Reverse pass from a scalar. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
            if let Op::Leaf = self.nodes[idx].op {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        // Accumulates into the gradient slot of `v` if it is differentiable.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[v.0];
            if !n.requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.numel()]);
            f(slot);
        };
        let add_into = |dst: &mut [f64], src: &[f64]| {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let p = self.shape(*b)[1];
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |da| kernels::mm_nt_acc(g, bd, da, m, p, k));
                acc(*b, &mut |db| kernels::mm_tn_acc(ad, g, db, k, m, p));
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let sa = self.shape(*a);
                let (groups, m, k) = (sa[0], sa[1], sa[2]);
                let p = node.value.shape()[2];
                let (ad, bd) = (self.data(*a), self.data(*b));
                let (ab, bb, gb) = (m * k, k * p, m * p);
                acc(*a, &mut |da| {
                    for gi in 0..groups {
                        let g_blk = &g[gi * gb..(gi + 1) * gb];
                        let b_blk = &bd[gi * bb..(gi + 1) * bb];
                        let da_blk = &mut da[gi * ab..(gi + 1) * ab];
                        if *trans_b {
                            // y = a·bᵀ: da = g·b
                            kernels::mm_acc(g_blk, b_blk, da_blk, m, p, k);
                        } else {
                            // y = a·b: da = g·bᵀ
                            kernels::mm_nt_acc(g_blk, b_blk, da_blk, m, p, k);
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for gi in 0..groups {
                        let g_blk = &g[gi * gb..(gi + 1) * gb];
                        let a_blk = &ad[gi * ab..(gi + 1) * ab];
                        let db_blk = &mut db[gi * bb..(gi + 1) * bb];
                        if *trans_b {
                            // db [p×k] = gᵀ·a
                            kernels::mm_tn_acc(g_blk, a_blk, db_blk, p, m, k);
                        } else {
                            // db [k×p] = aᵀ·g
                            kernels::mm_tn_acc(a_blk, g_blk, db_blk, k, m, p);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        da[i] += g[i] * bd[i];
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..db.len() {
                        db[i] += g[i] * ad[i];
                    }
                });
            }
            Op::AddBias(x, bias) => {
                acc(*x, &mut |dx| add_into(dx, g));
                let d = self.value(*bias).numel();
                acc(*bias, &mut |db| {
                    for row in g.chunks(d) {
                        add_into(db, row);
                    }
                });
            }
            Op::AddConst(x) | Op::Reshape(x) => acc(*x, &mut |dx| add_into(dx, g)),
            Op::Scale(x, f) => acc(*x, &mut |dx| {
                dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * f);
            }),
            Op::Gelu(x) => {
                let xd = self.data(*x);
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * kernels::gelu_grad(xd[i]);
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let local = kernels::softmax_axis_backward(y, g, node.value.shape(), *axis);
                acc(*x, &mut |dx| add_into(dx, &local));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gd = self.data(*gain);
                let d = gd.len();
                acc(*x, &mut |dx| {
                    let n = d as f64;
                    for (r, inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gd[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                        }
                        for j in 0..d {
                            let dh = gr[j] * gd[j];
                            dx[r * d + j] += inv / n * (n * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                });
                acc(*gain, &mut |dg| {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |db| {
                    for gr in g.chunks(d) {
                        add_into(db, gr);
                    }
                });
            }
            Op::GatherRows { src, rows } => {
                let d = self.shape(*src)[1];
                acc(*src, &mut |ds| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut ds[r * d..(r + 1) * d], &g[i * d..(i + 1) * d]);
                    }
                });
            }
            Op::SplitHeads {
                x,
                batch,
                seq,
                heads,
            } => {
                let hidden = self.shape(*x)[1];
                let dh = hidden / heads;
                acc(*x, &mut |dx| {
                    for b in 0..*batch {
                        for s in 0..*seq {
                            for h in 0..*heads {
                                let xi = (b * seq + s) * hidden + h * dh;
                                let yi = ((b * heads + h) * seq + s) * dh;
                                add_into(&mut dx[xi..xi + dh], &g[yi..yi + dh]);
                            }
                        }
                    }
                });
            }
            Op::MergeHeads {
                x,
                batch,
                seq,
                heads,
            } => {
                let dh = self.shape(*x)[2];
                let hidden = dh * heads;
                acc(*x, &mut |dx| {
                    for b in 0..*batch {
                        for s in 0..*seq {
                            for h in 0..*heads {
                                let yi = (b * seq + s) * hidden + h * dh;
                                let xi = ((b * heads + h) * seq + s) * dh;
                                add_into(&mut dx[xi..xi + dh], &g[yi..yi + dh]);
                            }
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |dx| {
                for i in 0..dx.len() {
                    dx[i] += g[i] * mask[i];
                }
            }),
            Op::Sum(x) => acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = self.shape(*logits)[1];
                let scale = g[0] / labels.len() as f64;
                acc(*logits, &mut |dl| {
                    for (b, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            dl[b * classes + c] += scale * (probs[b * classes + c] - onehot);
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(
            &Tensor::new(&[3], vec![1.0, -2.0, 5.0])
                .unwrap()
                .with_requires_grad(true),
        );
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(
            &Tensor::new(&[3], vec![1.0, 2.0, 3.0])
                .unwrap()
                .with_requires_grad(true),
        );
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let mut tape = Tape::new();
        let x = tape.leaf(
            &Tensor::new(&[2], vec![1.0, 2.0])
                .unwrap()
                .with_requires_grad(true),
        );
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(&[2]).with_requires_grad(true));
        let y = tape.scale(x, 2.0).unwrap();
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::ones(&[2, 2]), false);
        let x = tape.leaf(&Tensor::ones(&[1, 2]).with_requires_grad(true));
        let y = tape.matmul(x, w).unwrap();
        assert!(tape.requires_grad(y));
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(w).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn split_then_merge_heads_is_identity() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let x = tape.leaf(&Tensor::new(&[6, 4], data.clone()).unwrap());
        let s = tape.split_heads(x, 2, 3, 2).unwrap();
        assert_eq!(tape.shape(s), &[4, 3, 2]);
        let m = tape.merge_heads(s, 2, 3, 2).unwrap();
        assert_eq!(tape.value(m).data(), data.as_slice());
    }
}
