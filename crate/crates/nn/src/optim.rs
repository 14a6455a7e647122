use crate::layers::Param;

pub trait Optimizer {
    /// Applies one update from the accumulated gradients. Parameters must be
    /// passed in the same order on every call.
    fn step(&mut self, params: &mut [&mut Param]);

    fn learning_rate(&self) -> f32;

    fn set_learning_rate(&mut self, lr: f32);
}

/// Stochastic gradient descent with optional classical momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32) -> Self {
        Self { lr, momentum, velocity: Vec::new() }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [&mut Param]) {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        for (p, vel) in params.iter_mut().zip(&mut self.velocity) {
            let grad = p.grad.data().to_vec();
            for ((w, g), v) in p.value.data_mut().iter_mut().zip(&grad).zip(vel.iter_mut()) {
                *v = self.momentum * *v + g;
                *w -= self.lr * *v;
            }
        }
    }

    fn learning_rate(&self) -> f32 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f32) {
        self.lr = lr;
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32) -> Self {
        Self { lr, beta1, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
            self.t = 0;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data().to_vec();
            for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }

    fn learning_rate(&self) -> f32 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f32) {
        self.lr = lr;
    }
}

/// Step decay: `initial * factor^(epoch / every)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepDecay {
    pub initial: f32,
    pub factor: f32,
    pub every: usize,
}

impl StepDecay {
    pub fn lr_at(&self, epoch: usize) -> f32 {
        self.initial * self.factor.powi((epoch / self.every.max(1)) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn quadratic_param() -> Param {
        Param::new(Tensor::from_vec(&[2], vec![3.0, -2.0]))
    }

    fn set_grad(p: &mut Param) {
        // d/dw of 0.5 * |w|^2
        let g = p.value.clone();
        p.grad = g;
    }

    #[test]
    fn sgd_and_adam_descend_on_a_quadratic() {
        let mut sgd = Sgd::new(0.1, 0.9);
        let mut adam = Adam::new(0.1, 0.5);
        let (mut a, mut b) = (quadratic_param(), quadratic_param());
        for _ in 0..200 {
            set_grad(&mut a);
            sgd.step(&mut [&mut a]);
            set_grad(&mut b);
            adam.step(&mut [&mut b]);
        }
        assert!(a.value.data().iter().all(|v| v.abs() < 1e-3));
        assert!(b.value.data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = quadratic_param();
        let before = p.value.clone();
        set_grad(&mut p);
        Sgd::new(0.0, 0.9).step(&mut [&mut p]);
        Adam::new(0.0, 0.5).step(&mut [&mut p]);
        assert_eq!(p.value, before);
    }

    #[test]
    fn step_decay_halves_every_fifteen_epochs() {
        let s = StepDecay { initial: 0.1, factor: 0.5, every: 15 };
        assert_eq!(s.lr_at(0), 0.1);
        assert_eq!(s.lr_at(14), 0.1);
        assert!((s.lr_at(15) - 0.05).abs() < 1e-9);
        assert!((s.lr_at(31) - 0.025).abs() < 1e-9);
    }
}
