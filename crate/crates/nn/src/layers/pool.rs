use super::{Layer, Mode};
use crate::tensor::Tensor;

fn pooled_shape(input: &[usize], size: usize) -> Result<Vec<usize>, String> {
    match *input {
        [n, c, h, w] if h >= size && w >= size => Ok(vec![n, c, h / size, w / size]),
        [_, _, h, w] => Err(format!("cannot pool {h}x{w} with window {size}")),
        _ => Err(format!("expected rank-4 input, got {input:?}")),
    }
}

/// Non-overlapping max pooling (window = stride); trailing rows/columns
/// that do not fill a window are dropped.
#[derive(Debug)]
pub struct MaxPool2d {
    size: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(size: usize) -> Self {
        Self { size, cache: None }
    }

    fn run(&self, x: &Tensor) -> (Tensor, Vec<usize>) {
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = (h / self.size, w / self.size);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut arg = vec![0usize; out.len()];
        let xd = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = base;
                    for ky in 0..self.size {
                        let row = base + (oy * self.size + ky) * w + ox * self.size;
                        for idx in row..row + self.size {
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out.data_mut()[o] = best;
                    arg[o] = best_idx;
                }
            }
        }
        (out, arg)
    }
}

impl Layer for MaxPool2d {
    fn kind(&self) -> &'static str {
        "max_pool2d"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Tensor {
        let (out, arg) = self.run(x);
        self.cache = Some((x.shape().to_vec(), arg));
        out
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        self.run(x).0
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (shape, arg) = self.cache.as_ref().expect("max_pool: backward before forward");
        let mut dx = Tensor::zeros(shape);
        for (g, &i) in grad.data().iter().zip(arg) {
            dx.data_mut()[i] += g;
        }
        dx
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        pooled_shape(input, self.size)
    }
}

/// Non-overlapping average pooling.
#[derive(Debug)]
pub struct AvgPool2d {
    size: usize,
    input_shape: Option<Vec<usize>>,
}

impl AvgPool2d {
    pub fn new(size: usize) -> Self {
        Self { size, input_shape: None }
    }
}

impl Layer for AvgPool2d {
    fn kind(&self) -> &'static str {
        "avg_pool2d"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Tensor {
        self.input_shape = Some(x.shape().to_vec());
        self.infer(x)
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = (h / self.size, w / self.size);
        let scale = 1.0 / (self.size * self.size) as f32;
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        for plane in 0..n * c {
            let src = &x.data()[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..self.size {
                        let row = (oy * self.size + ky) * w + ox * self.size;
                        acc += src[row..row + self.size].iter().sum::<f32>();
                    }
                    out.data_mut()[(plane * oh + oy) * ow + ox] = acc * scale;
                }
            }
        }
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let shape = self.input_shape.as_ref().expect("avg_pool: backward before forward");
        let (h, w) = (shape[2], shape[3]);
        let (oh, ow) = (h / self.size, w / self.size);
        let scale = 1.0 / (self.size * self.size) as f32;
        let mut dx = Tensor::zeros(shape);
        let planes = shape[0] * shape[1];
        for plane in 0..planes {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad.data()[(plane * oh + oy) * ow + ox] * scale;
                    for ky in 0..self.size {
                        let row = plane * h * w + (oy * self.size + ky) * w + ox * self.size;
                        dx.data_mut()[row..row + self.size].iter_mut().for_each(|v| *v += g);
                    }
                }
            }
        }
        dx
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        pooled_shape(input, self.size)
    }
}
