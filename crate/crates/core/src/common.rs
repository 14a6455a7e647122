//! Small helpers shared by the model modules.

use headpose_nn::{Optimizer, Sequential, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::image::Image;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

/// Stacks equally sized single-channel images into `(n, 1, h, w)`.
pub fn images_to_tensor(images: &[&Image]) -> Tensor {
    let (w, h) = (images[0].width(), images[0].height());
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        assert_eq!((img.width(), img.height()), (w, h), "images must share a size");
        data.extend_from_slice(img.data());
    }
    Tensor::from_vec(&[images.len(), 1, h, w], data)
}

/// Mean squared error over every element, and its gradient.
pub fn mse(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    assert_eq!(pred.shape(), target.shape());
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad: Vec<f32> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = (p - t) as f64;
            loss += d * d;
            (2.0 * d / n) as f32
        })
        .collect();
    (loss / n, Tensor::from_vec(pred.shape(), grad))
}

/// Index batches for one epoch, shuffled by `rng`.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

pub fn optimizer_step(net: &mut Sequential, opt: &mut dyn Optimizer) {
    let mut params = net.params_mut();
    opt.step(&mut params);
}

/// Mean of a window of up to `window` trailing values at each position.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_mean() {
        assert_eq!(smooth(&[4.0, 2.0, 0.0, 2.0], 2), vec![4.0, 3.0, 1.0, 1.0]);
        assert_eq!(smooth(&[1.0, 2.0], 5), vec![1.0, 1.5]);
        assert!(smooth(&[], 3).is_empty());
    }
}
