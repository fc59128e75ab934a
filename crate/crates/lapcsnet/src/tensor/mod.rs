//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The engine provides exactly the operations the reconstruction network
//! needs: strided convolution, 2x transposed convolution, leaky ReLU,
//! elementwise addition, the Charbonnier penalty and a handful of
//! reductions. Forward values are computed eagerly while a [`Graph`]
//! records each operation; [`Graph::backward`] replays the record in
//! reverse to fill gradients.
//!
//! Storage is `f32` in the production path; every operation is also
//! available on `f64` tensors, which is the precision used for
//! finite-difference gradient checking.

mod graph;
pub(crate) mod kernels;
mod init;
mod sgd;

use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

pub use graph::{Graph, NodeId};
pub use init::{bilinear_upsample_kernel, gaussian_init, he_init, seeded_rng, Rng, RNG_ALGORITHM};
pub use sgd::{sgd_step, zero_grads};

/// Element type of a tensor: `f32` (production) or `f64` (gradient checks).
pub trait Scalar:
    Float + Send + Sync + fmt::Debug + fmt::Display + Default + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense n-dimensional array in row-major layout.
///
/// The canonical image layout is `[batch, channels, height, width]`.
/// Dimensions are fixed at creation; `reshape` returns a fresh tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    /// All-zero tensor with the given dimensions.
    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    /// Tensor filled with a single value.
    pub fn full(dims: &[usize], value: T) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "tensor extents must be positive");
        let n = dims.iter().product();
        Tensor { dims: dims.to_vec(), values: vec![value; n], grad: None, requires_grad: false }
    }

    /// Tensor from explicit values; the length must match the dimensions.
    pub fn from_vec(dims: &[usize], values: Vec<T>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Argument("tensor extents must be positive".into()));
        }
        let n: usize = dims.iter().product();
        if values.len() != n {
            return Err(Error::Shape(format!(
                "value count {} does not match dims {:?} (expected {})",
                values.len(),
                dims,
                n
            )));
        }
        Ok(Tensor { dims: dims.to_vec(), values, grad: None, requires_grad: false })
    }

    /// Single-element tensor holding a scalar.
    pub fn scalar(value: T) -> Self {
        Tensor { dims: vec![1], values: vec![value], grad: None, requires_grad: false }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// True when the tensor holds exactly one element.
    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// New tensor with the same values and different dimensions.
    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        Tensor::from_vec(dims, self.values.clone())
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires: bool) {
        self.requires_grad = requires;
    }

    /// Accumulated gradient, if any has been recorded.
    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Drop the gradient buffer.
    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Add `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.values.len());
        let grad = self.grad.get_or_insert_with(|| vec![T::zero(); self.values.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g = *g + *d;
        }
    }

    /// Cast every element, e.g. to run an `f32` model in `f64` precision.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            grad: None,
            requires_grad: self.requires_grad,
        }
    }

    /// Largest absolute element, zero for empty buffers.
    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }
}

/// Named learnable tensor with an SGD momentum buffer.
#[derive(Debug, Clone)]
pub struct Parameter<T: Scalar> {
    name: String,
    tensor: Tensor<T>,
    momentum: Vec<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, mut tensor: Tensor<T>) -> Self {
        tensor.set_requires_grad(true);
        let momentum = vec![T::zero(); tensor.numel()];
        Parameter { name: name.into(), tensor, momentum }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor<T> {
        &mut self.tensor
    }

    pub fn momentum(&self) -> &[T] {
        &self.momentum
    }

    pub(crate) fn momentum_mut(&mut self) -> &mut [T] {
        &mut self.momentum
    }

    /// Replace the momentum buffer, e.g. when resuming from a checkpoint.
    pub fn set_momentum(&mut self, momentum: Vec<T>) -> Result<()> {
        if momentum.len() != self.tensor.numel() {
            return Err(Error::Shape(format!(
                "momentum buffer for {} has {} elements, parameter has {}",
                self.name,
                momentum.len(),
                self.tensor.numel()
            )));
        }
        self.momentum = momentum;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_length_mismatch() {
        let err = Tensor::<f32>::from_vec(&[2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn reshape_shares_no_state() {
        let t = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = t.reshape(&[4]).unwrap();
        assert_eq!(r.dims(), &[4]);
        assert_eq!(r.values(), t.values());
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::<f64>::zeros(&[3]);
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[1.0, 1.0, 1.0]);
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0]);
        t.clear_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn parameter_momentum_matches_tensor() {
        let p = Parameter::new("w", Tensor::<f32>::zeros(&[2, 2]));
        assert_eq!(p.momentum().len(), 4);
        assert!(p.tensor().requires_grad());
    }
}
