use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, Mode};
use crate::tensor::Tensor;

/// Inverted dropout: surviving activations are scaled by `1 / (1 - rate)`
/// during training, identity at inference.
#[derive(Debug)]
pub struct Dropout {
    rate: f32,
    rng: ChaCha8Rng,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(rate: f32, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Self { rate, rng: ChaCha8Rng::seed_from_u64(seed), mask: None }
    }

    pub fn rate(&self) -> f32 {
        self.rate
    }
}

impl Layer for Dropout {
    fn kind(&self) -> &'static str {
        "dropout"
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f32> = (0..x.len()).map(|_| if self.rng.gen::<f32>() < keep { scale } else { 0.0 }).collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.mask = Some(mask);
        Tensor::from_vec(x.shape(), data)
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        x.clone()
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        match &self.mask {
            None => grad.clone(),
            Some(mask) => {
                let data = grad.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                Tensor::from_vec(grad.shape(), data)
            }
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        Ok(input.to_vec())
    }
}
