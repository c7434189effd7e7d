//! Dense row-major `f64` tensors, the forward kernels shared by eager and
//! taped execution, reverse-mode differentiation, and Adam.

mod adam;
pub mod kernels;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use tape::{Tape, Var};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("tensor", shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![0.0; numel]).expect("zeros: dimensions must be positive")
    }

    pub fn ones(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![1.0; numel]).expect("ones: dimensions must be positive")
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(&[1], vec![value]).expect("scalar shape is valid")
    }

    /// Samples i.i.d. `N(0, std^2)` entries.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| normal.sample(rng)).collect();
        Self::new(shape, data).expect("randn: dimensions must be positive")
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(
            self.is_scalar(),
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the stored gradient, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::shape("accumulate_grad", &self.shape, &[g.len()]));
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `a [m×k] · b [k×p]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, p) = kernels::matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![0.0; m * p];
    kernels::mm(a.data(), b.data(), &mut out, m, k, p);
    Tensor::new(&[m, p], out)
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.shape().len() {
        return Err(Error::invalid(format!(
            "softmax axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    Tensor::new(x.shape(), kernels::softmax_axis(x.data(), x.shape(), axis))
}

/// Normalizes every row over the last axis, then applies `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, epsilon: f64) -> Result<Tensor> {
    let d = *x.shape().last().expect("tensor has at least one axis");
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::shape("layer_norm", x.shape(), gain.shape()));
    }
    let (y, _, _) = kernels::layer_norm(x.data(), gain.data(), bias.data(), d, epsilon);
    Tensor::new(x.shape(), y)
}

/// Tanh-approximated GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| kernels::gelu(v)).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Batch-mean cross-entropy of `logits [batch×classes]` against integer labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (loss, _) = kernels::cross_entropy(logits.data(), logits.shape(), labels)?;
    Ok(Tensor::scalar(loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn construction_checks_element_count() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[0, 3], vec![]).is_err());
        assert_eq!(Tensor::zeros(&[2, 3]).numel(), 6);
    }

    #[test]
    fn matmul_identity_and_projector() {
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(matmul(&eye, &m).unwrap().data(), m.data());

        let proj = t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(matmul(&proj, &b).unwrap().data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_rejects_mismatch_naming_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        match err {
            Error::Shape { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn softmax_cases() {
        let y = softmax(&t(&[2], &[0.0, 0.0]), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);

        let y = softmax(&t(&[2], &[1000.0, 0.0]), 0).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1].abs() < 1e-12);
        assert!(y.is_finite());

        let x = [1.0f64, 2.0, 3.0];
        let y = softmax(&t(&[3], &x), 0).unwrap();
        let denom: f64 = x.iter().map(|v| (v - 3.0).exp()).sum();
        for (yi, xi) in y.data().iter().zip(x) {
            assert!((yi - (xi - 3.0).exp() / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_along_leading_axis() {
        // columns of a 2x3 matrix
        let x = t(&[2, 3], &[0.0, 1.0, 2.0, 0.0, 3.0, -2.0]);
        let y = softmax(&x, 0).unwrap();
        for col in 0..3 {
            let s = y.data()[col] + y.data()[3 + col];
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(y.data()[0], 0.5);
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn layer_norm_cases() {
        let y = layer_norm(
            &t(&[1, 4], &[5.0; 4]),
            &Tensor::ones(&[4]),
            &Tensor::zeros(&[4]),
            1e-12,
        )
        .unwrap();
        assert_eq!(y.data(), &[0.0; 4]);

        let eps = 1e-12;
        let y = layer_norm(
            &t(&[1, 2], &[1.0, -1.0]),
            &Tensor::ones(&[2]),
            &Tensor::zeros(&[2]),
            eps,
        )
        .unwrap();
        let scale = 1.0 / (1.0 + eps).sqrt();
        assert!((y.data()[0] - scale).abs() < 1e-15);
        assert!((y.data()[1] + scale).abs() < 1e-15);

        assert!(layer_norm(
            &t(&[1, 2], &[1.0, 2.0]),
            &Tensor::ones(&[3]),
            &Tensor::zeros(&[3]),
            eps
        )
        .is_err());
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = t(&[2, 4], &[1.0, 2.0, 3.0, 10.0, -4.0, 0.5, 0.25, 8.0]);
        let y = layer_norm(&x, &Tensor::ones(&[4]), &Tensor::zeros(&[4]), 1e-12).unwrap();
        for row in y.data().chunks(4) {
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gelu_values_and_asymptotes() {
        assert_eq!(kernels::gelu(0.0), 0.0);
        assert!((kernels::gelu(20.0) - 20.0).abs() < 1e-12);
        assert!(kernels::gelu(-20.0).abs() < 1e-12);
        // monotone on the non-negative half; the negative half has a dip near -0.75
        let grid: Vec<f64> = (0..=50).map(|i| i as f64 * 0.1).collect();
        for w in grid.windows(2) {
            assert!(kernels::gelu(w[1]) > kernels::gelu(w[0]));
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let l = cross_entropy(&t(&[1, 2], &[0.0, 0.0]), &[0])
            .unwrap()
            .item();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let l = cross_entropy(&t(&[1, 2], &[30.0, -30.0]), &[0])
            .unwrap()
            .item();
        assert!(l.abs() < 1e-9);
        assert!(cross_entropy(&t(&[1, 2], &[0.0, 0.0]), &[2]).is_err());
        assert!(cross_entropy(&t(&[2, 2], &[0.0; 4]), &[0]).is_err());
    }
}
