//! Layers with hand-written backward passes.
//!
//! Every layer supports two forward paths: [`Layer::forward`] caches what
//! [`Layer::backward`] needs, while [`Layer::infer`] is cache-free and takes
//! `&self`, so a frozen model can be shared across threads.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod linear;
mod pool;

pub use activation::{LeakyRelu, Relu, Sigmoid, Tanh};
pub use batchnorm::BatchNorm;
pub use conv::{Conv2d, ConvTranspose2d};
pub use dropout::Dropout;
pub use linear::Linear;
pub use pool::{AvgPool2d, MaxPool2d};

use rand::Rng;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

pub trait Layer: Send + Sync {
    fn kind(&self) -> &'static str;

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor;

    fn infer(&self, x: &Tensor) -> Tensor;

    /// Takes dL/dy, accumulates parameter gradients and returns dL/dx.
    fn backward(&mut self, grad: &Tensor) -> Tensor;

    /// Output shape for a given input shape, or a description of the mismatch.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    /// Named persistent tensors: parameters plus buffers such as running
    /// statistics.
    fn state(&self) -> Vec<(&'static str, &Tensor)> {
        Vec::new()
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        Vec::new()
    }
}

/// Glorot-uniform initialisation.
pub(crate) fn glorot(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-bound..bound)).collect())
}

pub(crate) fn expect_rank4(input: &[usize], channels: usize) -> Result<(usize, usize, usize), String> {
    match *input {
        [_, c, h, w] if c == channels => Ok((c, h, w)),
        [_, c, _, _] => Err(format!("expected {channels} channels, got {c}")),
        _ => Err(format!("expected rank-4 input, got {input:?}")),
    }
}
