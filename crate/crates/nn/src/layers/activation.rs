use super::{Layer, Mode};
use crate::tensor::Tensor;

/// `1 - 2 / (exp(2x) + 1)`; noticeably cheaper than `f32::tanh` and
/// within a few ulp of it away from zero.
fn tanh(x: f32) -> f32 {
    if x.abs() < 0.01 {
        return x.tanh();
    }
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

#[derive(Debug, Default)]
pub struct Tanh {
    out: Option<Tensor>,
}

impl Tanh {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Tanh {
    fn kind(&self) -> &'static str {
        "tanh"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Tensor {
        let y = self.infer(x);
        self.out = Some(y.clone());
        y
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        x.map(tanh)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let y = self.out.as_ref().expect("tanh: backward before forward");
        let data = grad.data().iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
        Tensor::from_vec(grad.shape(), data)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        Ok(input.to_vec())
    }
}

#[derive(Debug, Default)]
pub struct Sigmoid {
    out: Option<Tensor>,
}

impl Sigmoid {
    pub fn new() -> Self {
        Self::default()
    }
}

fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Layer for Sigmoid {
    fn kind(&self) -> &'static str {
        "sigmoid"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Tensor {
        let y = self.infer(x);
        self.out = Some(y.clone());
        y
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        x.map(sigmoid)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let y = self.out.as_ref().expect("sigmoid: backward before forward");
        let data = grad.data().iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
        Tensor::from_vec(grad.shape(), data)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        Ok(input.to_vec())
    }
}

#[derive(Debug, Default)]
pub struct Relu {
    input: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Tensor {
        self.input = Some(x.clone());
        self.infer(x)
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        x.map(|v| v.max(0.0))
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("relu: backward before forward");
        let data = grad.data().iter().zip(x.data()).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
        Tensor::from_vec(grad.shape(), data)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        Ok(input.to_vec())
    }
}

#[derive(Debug)]
pub struct LeakyRelu {
    slope: f32,
    input: Option<Tensor>,
}

impl LeakyRelu {
    pub fn new(slope: f32) -> Self {
        Self { slope, input: None }
    }
}

impl Layer for LeakyRelu {
    fn kind(&self) -> &'static str {
        "leaky_relu"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Tensor {
        self.input = Some(x.clone());
        self.infer(x)
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let s = self.slope;
        x.map(|v| if v > 0.0 { v } else { s * v })
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("leaky_relu: backward before forward");
        let s = self.slope;
        let data = grad.data().iter().zip(x.data()).map(|(g, x)| if *x > 0.0 { *g } else { s * g }).collect();
        Tensor::from_vec(grad.shape(), data)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        Ok(input.to_vec())
    }
}
