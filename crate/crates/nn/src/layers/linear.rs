use rand::Rng;

use super::{glorot, Layer, Mode, Param};
use crate::ops::gemm;
use crate::tensor::Tensor;

/// Fully connected layer. Any input whose per-item size equals `in_features`
/// is accepted and flattened; the output is `(N, out_features)`.
#[derive(Debug)]
pub struct Linear {
    in_features: usize,
    out_features: usize,
    weight: Param,
    bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, in_features: usize, out_features: usize) -> Self {
        let weight = glorot(rng, &[out_features, in_features], in_features, out_features);
        Self {
            in_features,
            out_features,
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(&[out_features])),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn weight(&self) -> &Param {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Param {
        &mut self.weight
    }
}

impl Layer for Linear {
    fn kind(&self) -> &'static str {
        "linear"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Tensor {
        self.input = Some(x.clone());
        self.infer(x)
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let n = x.batch();
        assert_eq!(x.item_len(), self.in_features, "linear: expected {} inputs", self.in_features);
        let mut out = Tensor::zeros(&[n, self.out_features]);
        for row in out.data_mut().chunks_mut(self.out_features) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(n, self.in_features, self.out_features, 1.0, x.data(), false, self.weight.value.data(), true, 1.0, out.data_mut());
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("linear: backward before forward");
        let n = x.batch();
        gemm(self.out_features, n, self.in_features, 1.0, grad.data(), true, x.data(), false, 1.0, self.weight.grad.data_mut());
        for row in grad.data().chunks(self.out_features) {
            self.bias.grad.data_mut().iter_mut().zip(row).for_each(|(b, g)| *b += g);
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(n, self.out_features, self.in_features, 1.0, grad.data(), false, self.weight.value.data(), false, 0.0, dx.data_mut());
        dx
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        let per_item: usize = input[1..].iter().product();
        if per_item != self.in_features {
            return Err(format!("linear expects {} inputs per item, got {per_item} ({input:?})", self.in_features));
        }
        Ok(vec![input[0], self.out_features])
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn state(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("weight", &self.weight.value), ("bias", &self.bias.value)]
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![("weight", &mut self.weight.value), ("bias", &mut self.bias.value)]
    }
}
