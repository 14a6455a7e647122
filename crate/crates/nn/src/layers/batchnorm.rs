use super::{Layer, Mode, Param};
use crate::tensor::Tensor;

/// Per-channel batch normalisation over every axis except dimension 1.
#[derive(Debug)]
pub struct BatchNorm {
    channels: usize,
    momentum: f32,
    eps: f32,
    gamma: Param,
    beta: Param,
    running_mean: Tensor,
    running_var: Tensor,
    cache: Option<Cache>,
}

#[derive(Debug)]
struct Cache {
    shape: Vec<usize>,
    normalized: Vec<f32>,
    inv_std: Vec<f32>,
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            momentum: 0.1,
            eps: 1e-5,
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            cache: None,
        }
    }

    fn layout(&self, x: &Tensor) -> (usize, usize) {
        let shape = x.shape();
        assert!(shape.len() >= 2 && shape[1] == self.channels, "batchnorm: expected {} channels", self.channels);
        (shape[0], shape[2..].iter().product())
    }

    fn normalize(&self, x: &Tensor, mean: &[f32], inv_std: &[f32]) -> (Tensor, Vec<f32>) {
        let (n, spatial) = self.layout(x);
        let mut normalized = vec![0.0; x.len()];
        let mut out = Tensor::zeros(x.shape());
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for i in 0..n {
            for c in 0..self.channels {
                let off = (i * self.channels + c) * spatial;
                for s in off..off + spatial {
                    let xh = (x.data()[s] - mean[c]) * inv_std[c];
                    normalized[s] = xh;
                    out.data_mut()[s] = g[c] * xh + b[c];
                }
            }
        }
        (out, normalized)
    }

    fn running_inv_std(&self) -> Vec<f32> {
        self.running_var.data().iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect()
    }
}

impl Layer for BatchNorm {
    fn kind(&self) -> &'static str {
        "batch_norm"
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let (n, spatial) = self.layout(x);
        if mode == Mode::Eval {
            let inv_std = self.running_inv_std();
            let (out, normalized) = self.normalize(x, &self.running_mean.data().to_vec(), &inv_std);
            self.cache = Some(Cache { shape: x.shape().to_vec(), normalized, inv_std, batch_stats: false });
            return out;
        }
        let m = (n * spatial) as f64;
        let mut mean = vec![0.0f32; self.channels];
        let mut var = vec![0.0f32; self.channels];
        for c in 0..self.channels {
            let mut sum = 0.0f64;
            for i in 0..n {
                let off = (i * self.channels + c) * spatial;
                sum += x.data()[off..off + spatial].iter().map(|&v| v as f64).sum::<f64>();
            }
            let mu = sum / m;
            let mut sq = 0.0f64;
            for i in 0..n {
                let off = (i * self.channels + c) * spatial;
                sq += x.data()[off..off + spatial].iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>();
            }
            mean[c] = mu as f32;
            var[c] = (sq / m) as f32;
        }
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (out, normalized) = self.normalize(x, &mean, &inv_std);
        let unbias = if m > 1.0 { (m / (m - 1.0)) as f32 } else { 1.0 };
        let k = self.momentum;
        for c in 0..self.channels {
            let rm = &mut self.running_mean.data_mut()[c];
            *rm = (1.0 - k) * *rm + k * mean[c];
            let rv = &mut self.running_var.data_mut()[c];
            *rv = (1.0 - k) * *rv + k * var[c] * unbias;
        }
        self.cache = Some(Cache { shape: x.shape().to_vec(), normalized, inv_std, batch_stats: true });
        out
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        self.normalize(x, self.running_mean.data(), &self.running_inv_std()).0
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let cache = self.cache.as_ref().expect("batchnorm: backward before forward");
        let n = cache.shape[0];
        let spatial: usize = cache.shape[2..].iter().product();
        let m = (n * spatial) as f32;
        let mut dx = Tensor::zeros(&cache.shape);
        for c in 0..self.channels {
            let mut sum_dy = 0.0f32;
            let mut sum_dy_xh = 0.0f32;
            for i in 0..n {
                let off = (i * self.channels + c) * spatial;
                for s in off..off + spatial {
                    sum_dy += grad.data()[s];
                    sum_dy_xh += grad.data()[s] * cache.normalized[s];
                }
            }
            self.gamma.grad.data_mut()[c] += sum_dy_xh;
            self.beta.grad.data_mut()[c] += sum_dy;
            let g = self.gamma.value.data()[c];
            let inv = cache.inv_std[c];
            for i in 0..n {
                let off = (i * self.channels + c) * spatial;
                for s in off..off + spatial {
                    dx.data_mut()[s] = if cache.batch_stats {
                        g * inv / m * (m * grad.data()[s] - sum_dy - cache.normalized[s] * sum_dy_xh)
                    } else {
                        g * inv * grad.data()[s]
                    };
                }
            }
        }
        dx
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        if input.len() < 2 || input[1] != self.channels {
            return Err(format!("batch norm expects {} channels, got {input:?}", self.channels));
        }
        Ok(input.to_vec())
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn state(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("gamma", &self.gamma.value),
            ("beta", &self.beta.value),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ]
    }

    fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("gamma", &mut self.gamma.value),
            ("beta", &mut self.beta.value),
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ]
    }
}
