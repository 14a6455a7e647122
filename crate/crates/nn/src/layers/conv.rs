use rand::Rng;

use super::{expect_rank4, glorot, Layer, Mode, Param};
use crate::ops::{col2im, gemm, im2col, im2row, ConvGeometry};
use crate::tensor::Tensor;

/// 2D convolution, weight layout `(out, in, k, k)`.
#[derive(Debug)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    weight: Param,
    bias: Param,
    input: Option<Tensor>,
    input_grad: bool,
}

impl Conv2d {
    pub fn new(
        rng: &mut impl Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let k2 = kernel * kernel;
        let weight = glorot(rng, &[out_channels, in_channels, kernel, kernel], in_channels * k2, out_channels * k2);
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(&[out_channels])),
            input: None,
            input_grad: true,
        }
    }

    /// For a first layer: backward still accumulates parameter gradients
    /// but returns a zero input gradient without computing it.
    pub fn without_input_grad(mut self) -> Self {
        self.input_grad = false;
        self
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn geometry(&self, h: usize, w: usize) -> ConvGeometry {
        ConvGeometry::new(self.in_channels, h, w, self.kernel, self.stride, self.pad)
            .unwrap_or_else(|| panic!("conv: kernel {} does not fit {h}x{w}", self.kernel))
    }
}

impl Layer for Conv2d {
    fn kind(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Tensor {
        self.input = Some(x.clone());
        self.infer(x)
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "conv: channel mismatch");
        let g = self.geometry(h, w);
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let mut cols = vec![0.0; rows * ncols];
        let mut out = Tensor::zeros(&[n, self.out_channels, g.out_h, g.out_w]);
        let bias = self.bias.value.data();
        for i in 0..n {
            im2col(x.item(i), &g, &mut cols);
            let y = out.item_mut(i);
            for (o, plane) in y.chunks_mut(ncols).enumerate() {
                plane.fill(bias[o]);
            }
            gemm(self.out_channels, rows, ncols, 1.0, self.weight.value.data(), false, &cols, false, 1.0, y);
        }
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("conv: backward before forward");
        let (n, _, h, w) = x.dims4();
        let g = self.geometry(h, w);
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let mut cols_t = vec![0.0; rows * ncols];
        let mut dcols = vec![0.0; rows * ncols];
        let mut dx = Tensor::zeros(x.shape());
        for i in 0..n {
            let dy = grad.item(i);
            im2row(x.item(i), &g, &mut cols_t);
            gemm(self.out_channels, ncols, rows, 1.0, dy, false, &cols_t, false, 1.0, self.weight.grad.data_mut());
            for (o, plane) in dy.chunks(ncols).enumerate() {
                self.bias.grad.data_mut()[o] += plane.iter().sum::<f32>();
            }
            if self.input_grad {
                gemm(rows, self.out_channels, ncols, 1.0, self.weight.value.data(), true, dy, false, 0.0, &mut dcols);
                col2im(&dcols, &g, dx.item_mut(i));
            }
        }
        dx
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        let (_, h, w) = expect_rank4(input, self.in_channels)?;
        let g = ConvGeometry::new(self.in_channels, h, w, self.kernel, self.stride, self.pad)
            .ok_or_else(|| format!("kernel {} does not fit {h}x{w}", self.kernel))?;
        Ok(vec![input[0], self.out_channels, g.out_h, g.out_w])
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

/// Transposed ("fractionally strided") convolution, the adjoint of a
/// [`Conv2d`] with the same kernel, stride and padding. Weight layout
/// `(in, out, k, k)`.
///
/// `output_padding` resolves the size ambiguity of the adjoint:
/// `out = (in - 1) * stride - 2 * pad + kernel + output_padding`.
#[derive(Debug)]
pub struct ConvTranspose2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_padding: usize,
    weight: Param,
    bias: Param,
    input: Option<Tensor>,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rng: &mut impl Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Self {
        assert!(output_padding < stride, "output_padding must be smaller than stride");
        let k2 = kernel * kernel;
        let weight = glorot(rng, &[in_channels, out_channels, kernel, kernel], in_channels * k2, out_channels * k2);
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            output_padding,
            weight: Param::new(weight),
            bias: Param::new(Tensor::zeros(&[out_channels])),
            input: None,
        }
    }

    fn out_size(&self, size: usize) -> Option<usize> {
        ((size - 1) * self.stride + self.kernel + self.output_padding).checked_sub(2 * self.pad)
    }

    /// Geometry of the adjoint convolution that maps the output back to the input.
    fn geometry(&self, h: usize, w: usize) -> Option<ConvGeometry> {
        let (oh, ow) = (self.out_size(h)?, self.out_size(w)?);
        let g = ConvGeometry::new(self.out_channels, oh, ow, self.kernel, self.stride, self.pad)?;
        (g.out_h == h && g.out_w == w).then_some(g)
    }
}

impl Layer for ConvTranspose2d {
    fn kind(&self) -> &'static str {
        "conv_transpose2d"
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Tensor {
        self.input = Some(x.clone());
        self.infer(x)
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "conv_transpose: channel mismatch");
        let g = self.geometry(h, w).expect("conv_transpose: invalid geometry");
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let mut cols = vec![0.0; rows * ncols];
        let mut out = Tensor::zeros(&[n, self.out_channels, g.in_h, g.in_w]);
        let plane = g.in_h * g.in_w;
        for i in 0..n {
            gemm(rows, self.in_channels, ncols, 1.0, self.weight.value.data(), true, x.item(i), false, 0.0, &mut cols);
            let y = out.item_mut(i);
            col2im(&cols, &g, y);
            for (o, p) in y.chunks_mut(plane).enumerate() {
                let b = self.bias.value.data()[o];
                p.iter_mut().for_each(|v| *v += b);
            }
        }
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("conv_transpose: backward before forward");
        let (n, _, h, w) = x.dims4();
        let g = self.geometry(h, w).expect("conv_transpose: invalid geometry");
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let plane = g.in_h * g.in_w;
        let mut dcols = vec![0.0; rows * ncols];
        let mut dcols_t = vec![0.0; rows * ncols];
        let mut dx = Tensor::zeros(x.shape());
        for i in 0..n {
            let dy = grad.item(i);
            for (o, p) in dy.chunks(plane).enumerate() {
                self.bias.grad.data_mut()[o] += p.iter().sum::<f32>();
            }
            im2col(dy, &g, &mut dcols);
            gemm(self.in_channels, rows, ncols, 1.0, self.weight.value.data(), false, &dcols, false, 0.0, dx.item_mut(i));
            im2row(dy, &g, &mut dcols_t);
            gemm(self.in_channels, ncols, rows, 1.0, x.item(i), false, &dcols_t, false, 1.0, self.weight.grad.data_mut());
        }
        dx
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        let (_, h, w) = expect_rank4(input, self.in_channels)?;
        let g = self.geometry(h, w).ok_or_else(|| format!("transposed conv cannot upsample {h}x{w}"))?;
        Ok(vec![input[0], self.out_channels, g.in_h, g.in_w])
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
