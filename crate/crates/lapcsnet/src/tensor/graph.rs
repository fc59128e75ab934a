//! Operation recording and reverse-mode differentiation.
//!
//! A [`Graph`] owns every tensor produced during one forward pass. Nodes
//! only reference earlier nodes, so walking the record backwards visits
//! each node after all of its consumers.

use crate::error::{Error, Result};

use super::kernels::{self, ConvShape, UpconvShape};
use super::{Parameter, Scalar, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d { input: NodeId, weight: NodeId, bias: Option<NodeId>, shape: ConvShape },
    Upconv { input: NodeId, weight: NodeId, bias: Option<NodeId>, shape: UpconvShape },
    LeakyRelu { input: NodeId, slope: T },
    Add { lhs: NodeId, rhs: NodeId },
    Scale { input: NodeId, factor: T },
    Sum { input: NodeId },
    WeightedSum { input: NodeId, coeffs: Vec<T> },
    Charbonnier { pred: NodeId, target: NodeId, eps: T },
    BlockMerge { input: NodeId, k: usize },
    BlockSplit { input: NodeId, k: usize },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<usize>,
}

/// Tape of recorded operations in execution order.
#[derive(Debug, Default)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that does not require a gradient (inputs, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false, None)
    }

    /// Leaf that participates in differentiation (used by gradient checks).
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true, None)
    }

    /// Leaf bound to `params[index]`; gradients reach the parameter through
    /// [`Graph::backward`].
    pub fn param(&mut self, params: &[Parameter<T>], index: usize) -> NodeId {
        let value = params[index].tensor().clone();
        self.push(value, Op::Leaf, true, Some(index))
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` call with respect to node `id`.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool, param: Option<usize>) -> NodeId {
        self.nodes.push(Node { value, grad: None, op, needs_grad, param });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Strided 2-d convolution with zero padding.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let shape = ConvShape::resolve(
            self.value(input).dims(),
            self.value(weight).dims(),
            stride,
            pad,
        )?;
        if let Some(b) = bias {
            if self.value(b).dims() != [shape.out_channels] {
                return Err(Error::Shape(format!(
                    "conv2d bias must be [{}], got {:?}",
                    shape.out_channels,
                    self.value(b).dims()
                )));
            }
        }
        let out = kernels::conv2d_forward(
            self.value(input).values(),
            self.value(weight).values(),
            bias.map(|b| self.value(b).values()),
            &shape,
        );
        let needs =
            self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        let value = Tensor::from_vec(&shape.output_dims(), out)?;
        Ok(self.push(value, Op::Conv2d { input, weight, bias, shape }, needs, None))
    }

    /// 2x transposed convolution (4x4 kernel, stride 2, padding 1).
    pub fn conv_transpose2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    ) -> Result<NodeId> {
        let shape = UpconvShape::resolve(self.value(input).dims(), self.value(weight).dims())?;
        if let Some(b) = bias {
            if self.value(b).dims() != [shape.out_channels] {
                return Err(Error::Shape(format!(
                    "conv_transpose2d bias must be [{}], got {:?}",
                    shape.out_channels,
                    self.value(b).dims()
                )));
            }
        }
        let out = kernels::upconv_forward(
            self.value(input).values(),
            self.value(weight).values(),
            bias.map(|b| self.value(b).values()),
            &shape,
        );
        let needs =
            self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        let value = Tensor::from_vec(&shape.output_dims(), out)?;
        Ok(self.push(value, Op::Upconv { input, weight, bias, shape }, needs, None))
    }

    /// Elementwise `x if x >= 0 else slope * x`.
    pub fn leaky_relu(&mut self, input: NodeId, slope: T) -> Result<NodeId> {
        let x = self.value(input);
        let out: Vec<T> =
            x.values().iter().map(|&v| if v >= T::zero() { v } else { slope * v }).collect();
        let value = Tensor::from_vec(x.dims(), out)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::LeakyRelu { input, slope }, needs, None))
    }

    /// Elementwise sum of two tensors of identical dimensions.
    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.dims() != b.dims() {
            return Err(Error::Shape(format!(
                "add requires identical dims, got {:?} and {:?}",
                a.dims(),
                b.dims()
            )));
        }
        let out: Vec<T> = a.values().iter().zip(b.values()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::from_vec(a.dims(), out)?;
        let needs = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(value, Op::Add { lhs, rhs }, needs, None))
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, input: NodeId, factor: T) -> Result<NodeId> {
        let x = self.value(input);
        let out: Vec<T> = x.values().iter().map(|&v| factor * v).collect();
        let value = Tensor::from_vec(x.dims(), out)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::Scale { input, factor }, needs, None))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        let total = self.value(input).values().iter().fold(T::zero(), |a, &v| a + v);
        let needs = self.needs(input);
        Ok(self.push(Tensor::scalar(total), Op::Sum { input }, needs, None))
    }

    /// Dot product with fixed coefficients, as a scalar node.
    pub fn weighted_sum(&mut self, input: NodeId, coeffs: Vec<T>) -> Result<NodeId> {
        let x = self.value(input);
        if coeffs.len() != x.numel() {
            return Err(Error::Shape(format!(
                "weighted_sum expects {} coefficients, got {}",
                x.numel(),
                coeffs.len()
            )));
        }
        let total =
            x.values().iter().zip(&coeffs).fold(T::zero(), |a, (&v, &c)| a + v * c);
        let needs = self.needs(input);
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum { input, coeffs }, needs, None))
    }

    /// Robust penalty `sum(sqrt((pred - target)^2 + eps^2))` over all
    /// elements, as a scalar node.
    pub fn charbonnier(&mut self, pred: NodeId, target: NodeId, eps: T) -> Result<NodeId> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.dims() != t.dims() {
            return Err(Error::Shape(format!(
                "charbonnier requires identical dims, got {:?} and {:?}",
                p.dims(),
                t.dims()
            )));
        }
        let e2 = eps * eps;
        let total = p
            .values()
            .iter()
            .zip(t.values())
            .fold(T::zero(), |a, (&x, &y)| {
                let d = x - y;
                a + (d * d + e2).sqrt()
            });
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(total), Op::Charbonnier { pred, target, eps }, needs, None))
    }

    /// Rearrange `[N, k^2, gh, gw]` into `[N, 1, gh*k, gw*k]`: channel `c`
    /// of grid cell `(u, v)` lands at pixel `(u*k + c/k, v*k + c%k)`.
    pub fn block_merge(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let &[batch, channels, gh, gw] = x.dims() else {
            return Err(Error::Shape(format!("block_merge input must be 4-d, got {:?}", x.dims())));
        };
        let k = (channels as f64).sqrt().round() as usize;
        if k * k != channels {
            return Err(Error::Shape(format!(
                "block_merge channel count {channels} is not a perfect square"
            )));
        }
        let out = kernels::block_merge(x.values(), batch, k, gh, gw);
        let value = Tensor::from_vec(&[batch, 1, gh * k, gw * k], out)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::BlockMerge { input, k }, needs, None))
    }

    /// Inverse of [`Graph::block_merge`] for a given block edge `k`.
    pub fn block_split(&mut self, input: NodeId, k: usize) -> Result<NodeId> {
        let x = self.value(input);
        let &[batch, channels, h, w] = x.dims() else {
            return Err(Error::Shape(format!("block_split input must be 4-d, got {:?}", x.dims())));
        };
        if channels != 1 || k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::Shape(format!(
                "block_split expects [N,1,H,W] with H,W divisible by {k}, got {:?}",
                x.dims()
            )));
        }
        let out = kernels::block_split(x.values(), batch, k, h / k, w / k);
        let value = Tensor::from_vec(&[batch, k * k, h / k, w / k], out)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::BlockSplit { input, k }, needs, None))
    }

    /// Populate node gradients of everything `loss` depends on.
    ///
    /// Node gradients are recomputed from scratch on every call; parameter
    /// gradient buffers (see [`Graph::backward_params`]) accumulate across
    /// calls until explicitly cleared.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Argument(format!(
                "backward requires a scalar loss, got dims {:?}",
                self.nodes[loss.0].value.dims()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let grad = self.nodes[i].grad.take().expect("grad present");
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Conv2d { input, weight, bias, shape } => {
                    if self.needs(input) {
                        let gi = kernels::conv2d_backward_input(
                            &grad,
                            self.value(weight).values(),
                            &shape,
                        );
                        self.accumulate(input, gi);
                    }
                    if self.needs(weight) {
                        let gw = kernels::conv2d_backward_weight(
                            &grad,
                            self.value(input).values(),
                            &shape,
                        );
                        self.accumulate(weight, gw);
                    }
                    if let Some(b) = bias {
                        if self.needs(b) {
                            let gb = kernels::conv2d_backward_bias(&grad, &shape);
                            self.accumulate(b, gb);
                        }
                    }
                }
                Op::Upconv { input, weight, bias, shape } => {
                    if self.needs(input) {
                        let gi = kernels::upconv_backward_input(
                            &grad,
                            self.value(weight).values(),
                            &shape,
                        );
                        self.accumulate(input, gi);
                    }
                    if self.needs(weight) {
                        let gw = kernels::upconv_backward_weight(
                            &grad,
                            self.value(input).values(),
                            &shape,
                        );
                        self.accumulate(weight, gw);
                    }
                    if let Some(b) = bias {
                        if self.needs(b) {
                            let gb = kernels::upconv_backward_bias(&grad, &shape);
                            self.accumulate(b, gb);
                        }
                    }
                }
                Op::LeakyRelu { input, slope } => {
                    if self.needs(input) {
                        // Subgradient at zero is taken as 1.
                        let gi: Vec<T> = self
                            .value(input)
                            .values()
                            .iter()
                            .zip(&grad)
                            .map(|(&x, &g)| if x >= T::zero() { g } else { slope * g })
                            .collect();
                        self.accumulate(input, gi);
                    }
                }
                Op::Add { lhs, rhs } => {
                    if self.needs(lhs) {
                        self.accumulate(lhs, grad.clone());
                    }
                    if self.needs(rhs) {
                        self.accumulate(rhs, grad.clone());
                    }
                }
                Op::Scale { input, factor } => {
                    if self.needs(input) {
                        let gi: Vec<T> = grad.iter().map(|&g| factor * g).collect();
                        self.accumulate(input, gi);
                    }
                }
                Op::Sum { input } => {
                    if self.needs(input) {
                        let gi = vec![grad[0]; self.value(input).numel()];
                        self.accumulate(input, gi);
                    }
                }
                Op::WeightedSum { input, coeffs } => {
                    if self.needs(input) {
                        let gi: Vec<T> = coeffs.iter().map(|&c| grad[0] * c).collect();
                        self.accumulate(input, gi);
                    }
                }
                Op::Charbonnier { pred, target, eps } => {
                    let e2 = eps * eps;
                    let d: Vec<T> = self
                        .value(pred)
                        .values()
                        .iter()
                        .zip(self.value(target).values())
                        .map(|(&x, &y)| {
                            let diff = x - y;
                            grad[0] * diff / (diff * diff + e2).sqrt()
                        })
                        .collect();
                    if self.needs(target) {
                        let gt: Vec<T> = d.iter().map(|&v| -v).collect();
                        self.accumulate(target, gt);
                    }
                    if self.needs(pred) {
                        self.accumulate(pred, d);
                    }
                }
                Op::BlockMerge { input, k } => {
                    if self.needs(input) {
                        let dims = self.value(input).dims();
                        let (batch, gh, gw) = (dims[0], dims[2], dims[3]);
                        let gi = kernels::block_split(&grad, batch, k, gh, gw);
                        self.accumulate(input, gi);
                    }
                }
                Op::BlockSplit { input, k } => {
                    if self.needs(input) {
                        let dims = self.value(input).dims();
                        let (batch, h, w) = (dims[0], dims[2], dims[3]);
                        let gi = kernels::block_merge(&grad, batch, k, h / k, w / k);
                        self.accumulate(input, gi);
                    }
                }
            }
            self.nodes[i].grad = Some(grad);
        }
        Ok(())
    }

    /// Run [`Graph::backward`] and add each bound leaf's gradient into the
    /// matching parameter's gradient buffer.
    pub fn backward_params(&mut self, loss: NodeId, params: &mut [Parameter<T>]) -> Result<()> {
        self.backward(loss)?;
        for node in &self.nodes {
            if let (Some(index), Some(grad)) = (node.param, node.grad.as_ref()) {
                params[index].tensor_mut().accumulate_grad(grad);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: Vec<T>) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(grad) => {
                for (g, d) in grad.iter_mut().zip(&delta) {
                    *g = *g + *d;
                }
            }
            None => node.grad = Some(delta),
        }
    }
}
