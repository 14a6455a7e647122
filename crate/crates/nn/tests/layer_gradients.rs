//! Every layer's backward pass against central finite differences of the
//! scalar probe loss `sum(r * y)` for a fixed random `r`.

use headpose_nn::gradcheck::max_relative_error;
use headpose_nn::layers::{
    AvgPool2d, BatchNorm, Conv2d, ConvTranspose2d, LeakyRelu, Linear, MaxPool2d, Relu, Sigmoid, Tanh,
};
use headpose_nn::{Layer, Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn probe(layer: &mut dyn Layer, x: &Tensor, r: &Tensor, mode: Mode) -> f64 {
    let y = layer.forward(x, mode);
    y.data().iter().zip(r.data()).map(|(a, b)| *a as f64 * *b as f64).sum()
}

/// Checks dL/dx and dL/dparams; returns the worst relative error.
fn check(layer: &mut dyn Layer, input_shape: &[usize], mode: Mode, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&mut rng, input_shape);
    let out_shape = layer.output_shape(input_shape).unwrap();
    let r = random(&mut rng, &out_shape);
    let eps = 1e-2f32;

    layer.params_mut().into_iter().for_each(|p| p.zero_grad());
    let y = layer.forward(&x, mode);
    assert_eq!(y.shape(), &out_shape[..]);
    let dx = layer.backward(&r);

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += eps;
        let up = probe(layer, &xp, &r, mode);
        xp.data_mut()[i] -= 2.0 * eps;
        let down = probe(layer, &xp, &r, mode);
        analytic.push(dx.data()[i] as f64);
        numeric.push((up - down) / (2.0 * eps as f64));
    }
    let n_params = layer.params().len();
    for pi in 0..n_params {
        let len = layer.params()[pi].value.len();
        for j in 0..len {
            analytic.push(layer.params()[pi].grad.data()[j] as f64);
            let orig = layer.params()[pi].value.data()[j];
            layer.params_mut()[pi].value.data_mut()[j] = orig + eps;
            let up = probe(layer, &x, &r, mode);
            layer.params_mut()[pi].value.data_mut()[j] = orig - eps;
            let down = probe(layer, &x, &r, mode);
            layer.params_mut()[pi].value.data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * eps as f64));
        }
    }
    max_relative_error(&analytic, &numeric, 1e-2)
}

#[test]
fn conv2d_strided_padded() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut l = Conv2d::new(&mut rng, 2, 3, 3, 2, 1);
    assert!(check(&mut l, &[2, 2, 6, 5], Mode::Train, 2) < 2e-3);
}

#[test]
fn conv2d_valid() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut l = Conv2d::new(&mut rng, 1, 2, 4, 1, 0);
    assert!(check(&mut l, &[1, 1, 7, 7], Mode::Train, 4) < 2e-3);
}

#[test]
fn conv2d_without_input_grad_keeps_param_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[2, 2, 6, 6]);
    let mut a = Conv2d::new(&mut ChaCha8Rng::seed_from_u64(9), 2, 3, 3, 1, 0);
    let mut b = Conv2d::new(&mut ChaCha8Rng::seed_from_u64(9), 2, 3, 3, 1, 0).without_input_grad();
    let r = random(&mut rng, &[2, 3, 4, 4]);
    a.forward(&x, Mode::Train);
    b.forward(&x, Mode::Train);
    a.backward(&r);
    let dx = b.backward(&r);
    assert!(dx.data().iter().all(|&v| v == 0.0));
    for (pa, pb) in a.params().iter().zip(b.params()) {
        assert_eq!(pa.grad, pb.grad);
    }
}

#[test]
fn conv_transpose_doubles_and_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut l = ConvTranspose2d::new(&mut rng, 3, 2, 5, 2, 2, 1);
    assert_eq!(l.output_shape(&[1, 3, 4, 4]).unwrap(), vec![1, 2, 8, 8]);
    assert!(check(&mut l, &[2, 3, 4, 3], Mode::Train, 6) < 2e-3);
}

#[test]
fn linear_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut l = Linear::new(&mut rng, 12, 5);
    assert!(check(&mut l, &[3, 3, 2, 2], Mode::Train, 8) < 2e-3);
}

#[test]
fn batch_norm_train_and_eval() {
    let mut l = BatchNorm::new(3);
    assert!(check(&mut l, &[4, 3, 2, 2], Mode::Train, 9) < 5e-3);
    assert!(check(&mut l, &[2, 3, 2, 2], Mode::Eval, 10) < 2e-3);
}

#[test]
fn pooling_layers() {
    assert!(check(&mut AvgPool2d::new(2), &[2, 2, 4, 6], Mode::Train, 11) < 2e-3);
    // random inputs make ties vanishingly unlikely; eps is below the typical gap
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&mut rng, &[1, 1, 4, 4]);
    let mut pool = MaxPool2d::new(2);
    let y = pool.forward(&x, Mode::Train);
    let dx = pool.backward(&Tensor::full(y.shape(), 1.0));
    assert_eq!(dx.data().iter().filter(|v| **v == 1.0).count(), 4);
}

#[test]
fn activations() {
    assert!(check(&mut Tanh::new(), &[2, 7], Mode::Train, 13) < 2e-3);
    assert!(check(&mut Sigmoid::new(), &[2, 7], Mode::Train, 14) < 2e-3);
    assert!(check(&mut Relu::new(), &[2, 7], Mode::Train, 15) < 2e-3);
    assert!(check(&mut LeakyRelu::new(0.2), &[2, 7], Mode::Train, 16) < 2e-3);
}

#[test]
fn infer_matches_eval_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut bn = BatchNorm::new(2);
    let x = random(&mut rng, &[3, 2, 3, 3]);
    bn.forward(&x, Mode::Train);
    assert_eq!(bn.forward(&x, Mode::Eval), bn.infer(&x));
    let mut conv = ConvTranspose2d::new(&mut rng, 2, 1, 5, 2, 2, 1);
    assert_eq!(conv.forward(&x, Mode::Train), conv.infer(&x));
}
