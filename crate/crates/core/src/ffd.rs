//! Face-from-Depth: a deterministic conditional GAN translating a depth
//! head crop into a gray face image, and the Gaussian-mask loss of the
//! earlier non-adversarial variant.

use std::path::Path;

use headpose_nn::layers::{BatchNorm, Conv2d, ConvTranspose2d, LeakyRelu, Linear, Relu, Sigmoid, Tanh};
use headpose_nn::{Adam, Checkpoint, CheckpointError, Mode, Optimizer, Sequential, Tensor};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::common::{images_to_tensor, ConfigError};
use crate::image::Image;

pub const CHECKPOINT_KIND: &str = "ffd";
pub const PROB_CLAMP: f64 = 1e-7;
pub const LEGACY_ALPHA: f64 = 3.5;
pub const LEGACY_BETA: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub input_size: usize,
    pub encoder_filters: Vec<usize>,
    pub decoder_filters: Vec<usize>,
    pub kernel: usize,
    pub convs_per_stage: usize,
    pub batch_norm: bool,
    pub leaky_slope: f32,
    /// Concatenate encoder features into the decoder stage of equal resolution.
    pub unet: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            encoder_filters: vec![128, 256, 512, 1024],
            decoder_filters: vec![512, 256, 128, 64],
            kernel: 5,
            convs_per_stage: 3,
            batch_norm: true,
            leaky_slope: 0.2,
            unet: false,
        }
    }
}

impl GeneratorConfig {
    /// Reduced widths and depth for CPU training.
    pub fn desk() -> Self {
        Self {
            encoder_filters: vec![8, 16, 32, 64],
            decoder_filters: vec![32, 16, 8, 8],
            convs_per_stage: 1,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub input_size: usize,
    pub filters: Vec<usize>,
    pub kernel: usize,
    pub leaky_slope: f32,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { input_size: 64, filters: vec![64, 128, 256, 512], kernel: 5, leaky_slope: 0.2 }
    }
}

impl DiscriminatorConfig {
    pub fn desk() -> Self {
        Self { filters: vec![8, 16, 32, 64], ..Self::default() }
    }
}

/// One planned layer: output shape `(channels, height, width)` and
/// trainable parameter count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedLayer {
    pub name: String,
    pub shape: (usize, usize, usize),
    pub params: usize,
}

fn check_sizes(input: usize, stages: usize, kernel: usize) -> Result<(), ConfigError> {
    if !input.is_power_of_two() {
        return Err(ConfigError(format!("input size {input} is not a power of two")));
    }
    if stages == 0 || input >> stages == 0 {
        return Err(ConfigError(format!("{stages} halving stages do not fit input size {input}")));
    }
    if kernel % 2 == 0 {
        return Err(ConfigError(format!("kernel {kernel} must be odd")));
    }
    Ok(())
}

struct Planner {
    layers: Vec<PlannedLayer>,
    shape: (usize, usize, usize),
}

impl Planner {
    fn push(&mut self, name: String, shape: (usize, usize, usize), params: usize) {
        self.shape = shape;
        self.layers.push(PlannedLayer { name, shape, params });
    }

    fn conv(&mut self, name: String, out: usize, k: usize, stride: usize) {
        let (c, h, w) = self.shape;
        self.push(name, (out, h / stride, w / stride), out * c * k * k + out);
    }

    fn up(&mut self, name: String, out: usize, k: usize) {
        let (c, h, w) = self.shape;
        self.push(name, (out, h * 2, w * 2), c * out * k * k + out);
    }

    fn norm(&mut self, name: String) {
        self.push(name, self.shape, 2 * self.shape.0);
    }

    fn act(&mut self, name: String) {
        self.push(name, self.shape, 0);
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_sizes(self.input_size, self.encoder_filters.len(), self.kernel)?;
        if self.decoder_filters.len() != self.encoder_filters.len() {
            return Err(ConfigError("decoder and encoder need the same number of stages".into()));
        }
        if self.encoder_filters.iter().chain(&self.decoder_filters).any(|&f| f == 0) {
            return Err(ConfigError("filter counts must be positive".into()));
        }
        if self.unet && self.convs_per_stage == 0 {
            return Err(ConfigError("skip connections need at least one conv per stage".into()));
        }
        Ok(())
    }

    /// Layer-by-layer shapes and parameter counts, without allocating weights.
    pub fn plan(&self) -> Result<Vec<PlannedLayer>, ConfigError> {
        self.validate()?;
        let k = self.kernel;
        let s = self.input_size;
        let mut p = Planner { layers: Vec::new(), shape: (1, s, s) };
        let mut skips = Vec::new();
        for (i, &f) in self.encoder_filters.iter().enumerate() {
            for j in 0..self.convs_per_stage {
                p.conv(format!("enc{i}.conv{j}"), f, k, 1);
                if self.batch_norm {
                    p.norm(format!("enc{i}.bn{j}"));
                }
                p.act(format!("enc{i}.act{j}"));
            }
            skips.push(p.shape.0);
            p.conv(format!("enc{i}.down"), f, k, 2);
            if self.batch_norm {
                p.norm(format!("enc{i}.down_bn"));
            }
            p.act(format!("enc{i}.down_act"));
        }
        let stages = self.decoder_filters.len();
        for (i, &f) in self.decoder_filters.iter().enumerate() {
            p.up(format!("dec{i}.up"), f, k);
            if self.batch_norm {
                p.norm(format!("dec{i}.up_bn"));
            }
            p.act(format!("dec{i}.up_act"));
            if self.unet {
                let (c, h, w) = p.shape;
                p.push(format!("dec{i}.skip"), (c + skips[stages - 1 - i], h, w), 0);
            }
            for j in 0..self.convs_per_stage {
                p.conv(format!("dec{i}.conv{j}"), f, k, 1);
                if self.batch_norm {
                    p.norm(format!("dec{i}.bn{j}"));
                }
                p.act(format!("dec{i}.act{j}"));
            }
        }
        p.conv("out.conv".into(), 1, k, 1);
        p.act("out.tanh".into());
        Ok(p.layers)
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_sizes(self.input_size, self.filters.len(), self.kernel)
    }

    pub fn plan(&self) -> Result<Vec<PlannedLayer>, ConfigError> {
        self.validate()?;
        let s = self.input_size;
        let mut p = Planner { layers: Vec::new(), shape: (1, s, s) };
        for (i, &f) in self.filters.iter().enumerate() {
            p.conv(format!("conv{i}"), f, self.kernel, 2);
            if i > 0 {
                p.norm(format!("bn{i}"));
            }
            p.act(format!("act{i}"));
        }
        let (c, h, w) = p.shape;
        p.push("fc".into(), (1, 1, 1), c * h * w + 1);
        p.act("sigmoid".into());
        Ok(p.layers)
    }
}

#[derive(Debug, Error)]
pub enum FfdError {
    #[error("no paired depth/gray crops to train on")]
    MissingPairs,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("history i/o: {0}")]
    History(String),
}

/// Encoder-decoder generator; stages are kept separate so that the
/// optional skip connections can be routed between them.
pub struct Generator {
    pub config: GeneratorConfig,
    enc_convs: Vec<Sequential>,
    enc_down: Vec<Sequential>,
    dec_up: Vec<Sequential>,
    dec_convs: Vec<Sequential>,
    out: Sequential,
    /// Channel count of each decoder stage's upsampled map (split point
    /// for skip gradients).
    up_channels: Vec<usize>,
}

fn conv_block(
    net: &mut Sequential,
    name: &str,
    conv: Conv2d,
    channels: usize,
    batch_norm: bool,
    leaky: Option<f32>,
) {
    net.push(name.to_string(), conv);
    if batch_norm {
        net.push(format!("{name}_bn"), BatchNorm::new(channels));
    }
    match leaky {
        Some(slope) => net.push(format!("{name}_act"), LeakyRelu::new(slope)),
        None => net.push(format!("{name}_act"), Relu::new()),
    };
}

pub fn build_generator(config: &GeneratorConfig, seed: u64) -> Result<Generator, ConfigError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, pad) = (config.kernel, config.kernel / 2);
    let leaky = Some(config.leaky_slope);
    let mut channels = 1;
    let mut enc_convs = Vec::new();
    let mut enc_down = Vec::new();
    let mut skips = Vec::new();
    for &f in &config.encoder_filters {
        let mut convs = Sequential::new();
        for j in 0..config.convs_per_stage {
            let conv = Conv2d::new(&mut rng, channels, f, k, 1, pad);
            let conv = if channels == 1 { conv.without_input_grad() } else { conv };
            conv_block(&mut convs, &format!("conv{j}"), conv, f, config.batch_norm, leaky);
            channels = f;
        }
        skips.push(channels);
        let mut down = Sequential::new();
        let conv = Conv2d::new(&mut rng, channels, f, k, 2, pad);
        let conv = if channels == 1 { conv.without_input_grad() } else { conv };
        conv_block(&mut down, "down", conv, f, config.batch_norm, leaky);
        channels = f;
        enc_convs.push(convs);
        enc_down.push(down);
    }
    let mut dec_up = Vec::new();
    let mut dec_convs = Vec::new();
    let mut up_channels = Vec::new();
    for (i, &f) in config.decoder_filters.iter().enumerate() {
        let mut up = Sequential::new();
        up.push("up", ConvTranspose2d::new(&mut rng, channels, f, k, 2, pad, 1));
        if config.batch_norm {
            up.push("up_bn", BatchNorm::new(f));
        }
        up.push("up_act", Relu::new());
        up_channels.push(f);
        channels = f;
        if config.unet {
            channels += skips[skips.len() - 1 - i];
        }
        let mut convs = Sequential::new();
        for j in 0..config.convs_per_stage {
            let conv = Conv2d::new(&mut rng, channels, f, k, 1, pad);
            conv_block(&mut convs, &format!("conv{j}"), conv, f, config.batch_norm, None);
            channels = f;
        }
        dec_up.push(up);
        dec_convs.push(convs);
    }
    let mut out = Sequential::new();
    out.push("conv", Conv2d::new(&mut rng, channels, 1, k, 1, pad));
    out.push("tanh", Tanh::new());
    Ok(Generator { config: config.clone(), enc_convs, enc_down, dec_up, dec_convs, out, up_channels })
}

impl Generator {
    fn stages_mut(&mut self) -> Vec<(String, &mut Sequential)> {
        let mut v: Vec<(String, &mut Sequential)> = Vec::new();
        for (i, s) in self.enc_convs.iter_mut().enumerate() {
            v.push((format!("enc{i}."), s));
        }
        for (i, s) in self.enc_down.iter_mut().enumerate() {
            v.push((format!("enc{i}.down."), s));
        }
        for (i, s) in self.dec_up.iter_mut().enumerate() {
            v.push((format!("dec{i}.up."), s));
        }
        for (i, s) in self.dec_convs.iter_mut().enumerate() {
            v.push((format!("dec{i}."), s));
        }
        v.push(("out.".into(), &mut self.out));
        v
    }

    fn stages(&self) -> Vec<(String, &Sequential)> {
        let mut v: Vec<(String, &Sequential)> = Vec::new();
        for (i, s) in self.enc_convs.iter().enumerate() {
            v.push((format!("enc{i}."), s));
        }
        for (i, s) in self.enc_down.iter().enumerate() {
            v.push((format!("enc{i}.down."), s));
        }
        for (i, s) in self.dec_up.iter().enumerate() {
            v.push((format!("dec{i}.up."), s));
        }
        for (i, s) in self.dec_convs.iter().enumerate() {
            v.push((format!("dec{i}."), s));
        }
        v.push(("out.".into(), &self.out));
        v
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let unet = self.config.unet;
        let mut skips = Vec::new();
        let mut h = x.clone();
        for (convs, down) in self.enc_convs.iter_mut().zip(&mut self.enc_down) {
            h = convs.forward(&h, mode);
            if unet {
                skips.push(h.clone());
            }
            h = down.forward(&h, mode);
        }
        for (up, convs) in self.dec_up.iter_mut().zip(&mut self.dec_convs) {
            h = up.forward(&h, mode);
            if let Some(s) = skips.pop() {
                h = Tensor::concat_channels(&h, &s);
            }
            h = convs.forward(&h, mode);
        }
        self.out.forward(&h, mode)
    }

    /// Cache-free evaluation-mode forward pass.
    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut skips = Vec::new();
        let mut h = x.clone();
        for (convs, down) in self.enc_convs.iter().zip(&self.enc_down) {
            h = convs.infer(&h);
            if self.config.unet {
                skips.push(h.clone());
            }
            h = down.infer(&h);
        }
        for (up, convs) in self.dec_up.iter().zip(&self.dec_convs) {
            h = up.infer(&h);
            if let Some(s) = skips.pop() {
                h = Tensor::concat_channels(&h, &s);
            }
            h = convs.infer(&h);
        }
        self.out.infer(&h)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        let stages = self.enc_convs.len();
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; stages];
        let mut g = self.out.backward(grad);
        for i in (0..stages).rev() {
            g = self.dec_convs[i].backward(&g);
            if self.config.unet {
                let (main, skip) = g.split_channels(self.up_channels[i]);
                skip_grads[stages - 1 - i] = Some(skip);
                g = main;
            }
            g = self.dec_up[i].backward(&g);
        }
        for i in (0..stages).rev() {
            g = self.enc_down[i].backward(&g);
            if let Some(s) = &skip_grads[i] {
                g.add_assign(s);
            }
            g = self.enc_convs[i].backward(&g);
        }
        g
    }

    pub fn zero_grad(&mut self) {
        for (_, s) in self.stages_mut() {
            s.zero_grad();
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut headpose_nn::Param> {
        let mut v = Vec::new();
        for s in self.enc_convs.iter_mut().chain(&mut self.enc_down).chain(&mut self.dec_up).chain(&mut self.dec_convs) {
            v.extend(s.params_mut());
        }
        v.extend(self.out.params_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.stages().iter().map(|(_, s)| s.param_count()).sum()
    }

    pub fn named_state(&self) -> Vec<(String, &Tensor)> {
        self.stages()
            .into_iter()
            .flat_map(|(prefix, s)| s.named_state().into_iter().map(move |(n, t)| (format!("{prefix}{n}"), t)))
            .collect()
    }

    pub fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.stages_mut()
            .into_iter()
            .flat_map(|(prefix, s)| s.named_state_mut().into_iter().map(move |(n, t)| (format!("{prefix}{n}"), t)))
            .collect()
    }
}

pub fn build_discriminator(config: &DiscriminatorConfig, seed: u64) -> Result<Sequential, ConfigError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, pad) = (config.kernel, config.kernel / 2);
    let mut net = Sequential::new();
    let mut channels = 1;
    for (i, &f) in config.filters.iter().enumerate() {
        net.push(format!("conv{i}"), Conv2d::new(&mut rng, channels, f, k, 2, pad));
        if i > 0 {
            net.push(format!("bn{i}"), BatchNorm::new(f));
        }
        net.push(format!("act{i}"), LeakyRelu::new(config.leaky_slope));
        channels = f;
    }
    let side = config.input_size >> config.filters.len();
    net.push("fc", Linear::new(&mut rng, channels * side * side, 1));
    net.push("sigmoid", Sigmoid::new());
    Ok(net)
}

fn clamp_prob(p: f32) -> f64 {
    (p as f64).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DLoss {
    pub loss: f64,
    pub grad_real: Vec<f64>,
    pub grad_fake: Vec<f64>,
}

/// `-mean[smooth * ln d_real + ln(1 - d_fake)]`; the real and fake
/// terms are each averaged over their own batch, so either side may be
/// evaluated alone.
pub fn d_loss(d_real: &[f32], d_fake: &[f32], smooth: f64) -> DLoss {
    let (nr, nf) = (d_real.len().max(1) as f64, d_fake.len().max(1) as f64);
    let mut loss = 0.0;
    let grad_real = d_real
        .iter()
        .map(|&r| {
            let r = clamp_prob(r);
            loss -= smooth * r.ln() / nr;
            -smooth / (r * nr)
        })
        .collect();
    let grad_fake = d_fake
        .iter()
        .map(|&f| {
            let f = clamp_prob(f);
            loss -= (1.0 - f).ln() / nf;
            1.0 / ((1.0 - f) * nf)
        })
        .collect();
    DLoss { loss, grad_real, grad_fake }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GLoss {
    pub total: f64,
    pub adversarial: f64,
    /// Pooled SSE, averaged over the batch.
    pub sse: f64,
    pub grad_fake: Vec<f64>,
    pub grad_generated: Vec<f64>,
}

/// Sum of squared differences between `pool`×`pool` average-pooled maps.
fn pooled_sse(generated: &[f32], target: &[f32], side: usize, pool: usize, grad: Option<&mut [f64]>, scale: f64) -> f64 {
    let cells = side / pool;
    let area = (pool * pool) as f64;
    let mut sse = 0.0;
    let mut diffs = vec![0.0; cells * cells];
    for cy in 0..cells {
        for cx in 0..cells {
            let mut d = 0.0;
            for y in cy * pool..(cy + 1) * pool {
                for x in cx * pool..(cx + 1) * pool {
                    d += generated[y * side + x] as f64 - target[y * side + x] as f64;
                }
            }
            let d = d / area;
            diffs[cy * cells + cx] = d;
            sse += d * d;
        }
    }
    if let Some(grad) = grad {
        for y in 0..cells * pool {
            for x in 0..cells * pool {
                grad[y * side + x] = scale * 2.0 * diffs[(y / pool) * cells + x / pool] / area;
            }
        }
    }
    sse
}

/// Batch-mean pooled SSE between `(n, 1, s, s)` tensors.
pub fn batch_pooled_sse(generated: &Tensor, target: &Tensor, pool: usize) -> f64 {
    let (n, _, side, _) = generated.dims4();
    (0..n).map(|i| pooled_sse(generated.item(i), target.item(i), side, pool, None, 0.0)).sum::<f64>() / n as f64
}

/// `-mean ln d_fake + lambda * mean SSE(avgpool(generated), avgpool(target))`.
pub fn g_loss(d_fake: &[f32], generated: &Tensor, target: &Tensor, lambda: f64, pool: usize) -> GLoss {
    assert_eq!(generated.shape(), target.shape());
    let (n, _, side, w) = generated.dims4();
    assert_eq!(side, w, "square images expected");
    let nf = n as f64;
    let mut adversarial = 0.0;
    let grad_fake = d_fake
        .iter()
        .map(|&f| {
            let f = clamp_prob(f);
            adversarial -= f.ln();
            -1.0 / (f * nf)
        })
        .collect();
    adversarial /= nf;
    let mut grad_generated = vec![0.0; generated.len()];
    let mut sse = 0.0;
    let item = generated.item_len();
    for i in 0..n {
        let g = &mut grad_generated[i * item..(i + 1) * item];
        sse += pooled_sse(generated.item(i), target.item(i), side, pool, Some(g), lambda / nf);
    }
    sse /= nf;
    GLoss { total: adversarial + lambda * sse, adversarial, sse, grad_fake, grad_generated }
}

/// Gaussian prior mask `w` with `mu = (R/2, C/2)` and
/// `Sigma = diag((R/alpha)^2, (C/beta)^2)`, peak 1.
pub fn legacy_mask(rows: usize, cols: usize) -> Image {
    let (mr, mc) = (rows as f64 / 2.0, cols as f64 / 2.0);
    let (sr, sc) = (rows as f64 / LEGACY_ALPHA, cols as f64 / LEGACY_BETA);
    Image::from_fn(cols, rows, |j, i| {
        let a = (i as f64 - mr) / sr;
        let b = (j as f64 - mc) / sc;
        (-0.5 * (a * a + b * b)).exp() as f32
    })
}

/// Mask-weighted mean squared error and its gradient w.r.t. `pred`.
pub fn legacy_ffd_loss(pred: &Image, target: &Image) -> (f64, Vec<f64>) {
    assert_eq!((pred.width(), pred.height()), (target.width(), target.height()));
    let (rows, cols) = (pred.height(), pred.width());
    let (mr, mc) = (rows as f64 / 2.0, cols as f64 / 2.0);
    let (sr, sc) = (rows as f64 / LEGACY_ALPHA, cols as f64 / LEGACY_BETA);
    let norm = (rows * cols) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let a = (i as f64 - mr) / sr;
            let b = (j as f64 - mc) / sc;
            let w = (-0.5 * (a * a + b * b)).exp();
            let d = pred.get(j, i) as f64 - target.get(j, i) as f64;
            loss += w * d * d;
            grad[i * cols + j] = 2.0 * w * d / norm;
        }
    }
    (loss / norm, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanHyper {
    pub lambda_content: f64,
    pub label_smooth: f64,
    pub adam_beta1: f32,
    pub batch_size: usize,
    /// Discriminator updates per generator update.
    pub k: usize,
    pub sse_pool: usize,
    pub lr_generator: f32,
    pub lr_discriminator: f32,
    pub steps: usize,
    pub seed: u64,
}

impl Default for GanHyper {
    fn default() -> Self {
        Self {
            lambda_content: 0.1,
            label_smooth: 0.9,
            adam_beta1: 0.5,
            batch_size: 64,
            k: 1,
            sse_pool: 4,
            lr_generator: 2e-4,
            lr_discriminator: 2e-4,
            steps: 500,
            seed: 0,
        }
    }
}

impl GanHyper {
    /// Small batch with a larger step size, for the desk-scale generator.
    pub fn desk() -> Self {
        Self { batch_size: 8, lr_generator: 2e-3, lr_discriminator: 2e-3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lambda_content < 0.0 {
            return Err(ConfigError("lambda_content must be non-negative".into()));
        }
        if !(self.label_smooth > 0.0 && self.label_smooth <= 1.0) {
            return Err(ConfigError("label_smooth must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 || self.sse_pool == 0 || self.k == 0 {
            return Err(ConfigError("batch_size, sse_pool and k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanStep {
    pub step: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_sse: f64,
}

pub struct Ffd {
    pub generator: Generator,
    pub discriminator: Sequential,
    pub discriminator_config: DiscriminatorConfig,
}

pub fn build_ffd(g: &GeneratorConfig, d: &DiscriminatorConfig, seed: u64) -> Result<Ffd, ConfigError> {
    if g.input_size != d.input_size {
        return Err(ConfigError("generator and discriminator input sizes differ".into()));
    }
    Ok(Ffd {
        generator: build_generator(g, seed)?,
        discriminator: build_discriminator(d, seed.wrapping_add(1))?,
        discriminator_config: d.clone(),
    })
}

fn to_tensor(v: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(shape, v.iter().map(|&x| x as f32).collect())
}

/// One discriminator step on a real/fake batch; returns the loss before the step.
pub fn discriminator_step(disc: &mut Sequential, opt: &mut dyn Optimizer, real: &Tensor, fake: &Tensor, smooth: f64) -> f64 {
    let n = real.batch();
    disc.zero_grad();
    let p_real = disc.forward(real, Mode::Train);
    let mut loss = d_loss(p_real.data(), &[], smooth);
    disc.backward(&to_tensor(&loss.grad_real, &[n, 1]));
    let p_fake = disc.forward(fake, Mode::Train);
    let fake_part = d_loss(&[], p_fake.data(), smooth);
    disc.backward(&to_tensor(&fake_part.grad_fake, &[fake.batch(), 1]));
    let mut params = disc.params_mut();
    opt.step(&mut params);
    loss.loss += fake_part.loss;
    loss.loss
}

/// Alternating det-cGAN training on paired `(depth, gray)` crops, gray in
/// `[-1, 1]`. History holds one entry per generator step.
pub fn train_ffd(model: &mut Ffd, pairs: &[(Image, Image)], hyper: &GanHyper) -> Result<Vec<GanStep>, FfdError> {
    hyper.validate()?;
    if pairs.is_empty() {
        return Err(FfdError::MissingPairs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut opt_g = Adam::new(hyper.lr_generator, hyper.adam_beta1);
    let mut opt_d = Adam::new(hyper.lr_discriminator, hyper.adam_beta1);
    let batch = hyper.batch_size.min(pairs.len());
    let mut history = Vec::with_capacity(hyper.steps);
    let sample = |rng: &mut ChaCha8Rng| {
        let idx = index::sample(rng, pairs.len(), batch).into_vec();
        let depth = images_to_tensor(&idx.iter().map(|&i| &pairs[i].0).collect::<Vec<_>>());
        let gray = images_to_tensor(&idx.iter().map(|&i| &pairs[i].1).collect::<Vec<_>>());
        (depth, gray)
    };
    for step in 0..hyper.steps {
        let mut d_value = 0.0;
        for _ in 0..hyper.k {
            let (depth, gray) = sample(&mut rng);
            let fake = model.generator.forward(&depth, Mode::Train);
            d_value = discriminator_step(&mut model.discriminator, &mut opt_d, &gray, &fake, hyper.label_smooth);
        }
        let (depth, gray) = sample(&mut rng);
        model.generator.zero_grad();
        let fake = model.generator.forward(&depth, Mode::Train);
        let p_fake = model.discriminator.forward(&fake, Mode::Train);
        let gl = g_loss(p_fake.data(), &fake, &gray, hyper.lambda_content, hyper.sse_pool);
        let mut grad = model.discriminator.backward(&to_tensor(&gl.grad_fake, &[batch, 1]));
        grad.add_assign(&to_tensor(&gl.grad_generated, fake.shape()));
        model.generator.backward(&grad);
        let mut params = model.generator.params_mut();
        opt_g.step(&mut params);
        history.push(GanStep { step, d_loss: d_value, g_adv: gl.adversarial, g_sse: gl.sse });
    }
    Ok(history)
}

pub fn write_history_csv(path: &Path, history: &[GanStep]) -> Result<(), FfdError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| FfdError::History(e.to_string()))?;
    for h in history {
        w.serialize(h).map_err(|e| FfdError::History(e.to_string()))?;
    }
    w.flush().map_err(|e| FfdError::History(e.to_string()))
}

/// Deterministic generator output for one normalised depth crop, in `[-1, 1]`.
pub fn ffd_infer(generator: &Generator, depth_crop: &Image) -> Image {
    let y = generator.infer(&images_to_tensor(&[depth_crop]));
    Image::from_vec(depth_crop.width(), depth_crop.height(), y.into_vec())
}

pub fn ffd_infer_batch(generator: &Generator, crops: &[&Image]) -> Vec<Image> {
    let y = generator.infer(&images_to_tensor(crops));
    let (w, h) = (crops[0].width(), crops[0].height());
    (0..crops.len()).map(|i| Image::from_vec(w, h, y.item(i).to_vec())).collect()
}

#[derive(Serialize, Deserialize)]
struct SavedConfig {
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
}

impl Ffd {
    pub fn save(&self, path: &Path) -> Result<(), FfdError> {
        let config = SavedConfig { generator: self.generator.config.clone(), discriminator: self.discriminator_config.clone() };
        Checkpoint::new(CHECKPOINT_KIND, serde_json::to_value(config).expect("config serialises"))
            .with_tensors("g.", self.generator.named_state())
            .with_tensors("d.", self.discriminator.named_state())
            .save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FfdError> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(CHECKPOINT_KIND)?;
        let cfg: SavedConfig =
            serde_json::from_value(ck.config.clone()).map_err(|e| ConfigError(format!("ffd config: {e}")))?;
        let mut model = build_ffd(&cfg.generator, &cfg.discriminator, 0)?;
        ck.restore("g.", model.generator.named_state_mut())?;
        ck.restore("d.", model.discriminator.named_state_mut())?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use headpose_nn::gradcheck::{max_relative_error, numeric_gradient};
    use headpose_nn::Sgd;

    fn small_gen(unet: bool) -> GeneratorConfig {
        GeneratorConfig {
            input_size: 16,
            encoder_filters: vec![2, 3],
            decoder_filters: vec![3, 2],
            kernel: 3,
            convs_per_stage: 1,
            unet,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn full_size_generator_plan_shapes() {
        let plan = GeneratorConfig::default().plan().unwrap();
        let bottleneck = plan.iter().find(|l| l.name == "enc3.down_act").unwrap();
        assert_eq!(bottleneck.shape, (1024, 4, 4));
        assert_eq!(plan.last().unwrap().shape, (1, 64, 64));
        let d = DiscriminatorConfig::default().plan().unwrap();
        assert_eq!(d.last().unwrap().shape, (1, 1, 1));
        assert_eq!(d.iter().find(|l| l.name == "act3").unwrap().shape, (512, 4, 4));
    }

    #[test]
    fn built_models_follow_their_plans() {
        for cfg in [GeneratorConfig::desk(), GeneratorConfig { unet: true, ..GeneratorConfig::desk() }] {
            let g = build_generator(&cfg, 1).unwrap();
            let plan = cfg.plan().unwrap();
            assert_eq!(g.param_count(), plan.iter().map(|l| l.params).sum::<usize>());
            let y = g.infer(&Tensor::zeros(&[2, 1, 64, 64]));
            assert_eq!(y.shape(), &[2, 1, 64, 64]);
            assert!(y.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        }
        let dc = DiscriminatorConfig::desk();
        let d = build_discriminator(&dc, 1).unwrap();
        assert_eq!(d.param_count(), dc.plan().unwrap().iter().map(|l| l.params).sum::<usize>());
        let p = d.infer(&Tensor::from_vec(&[3, 1, 64, 64], (0..3 * 4096).map(|i| (i % 13) as f32 - 6.0).collect()));
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn bad_sizes_rejected() {
        let g = GeneratorConfig { input_size: 48, ..GeneratorConfig::desk() };
        assert!(build_generator(&g, 0).is_err());
        let g = GeneratorConfig { input_size: 16, ..GeneratorConfig::desk() };
        assert!(g.plan().is_ok());
        let g = GeneratorConfig { input_size: 8, ..GeneratorConfig::desk() };
        assert!(g.plan().is_err());
        let g = GeneratorConfig { input_size: 16, encoder_filters: vec![1; 4], decoder_filters: vec![1; 5], ..GeneratorConfig::desk() };
        assert!(g.plan().is_err());
        assert!(DiscriminatorConfig { input_size: 60, ..DiscriminatorConfig::desk() }.validate().is_err());
    }

    #[test]
    fn d_loss_examples() {
        let l = d_loss(&[0.9], &[0.1], 0.9).loss;
        assert!((l - (-(0.9 * 0.9f64.ln() + 0.9f64.ln()))).abs() < 1e-7);
        assert!((l - 0.200_185).abs() < 1e-6);
        assert!(d_loss(&[1.0], &[0.0], 1.0).loss < 1e-6);
    }

    #[test]
    fn g_loss_examples() {
        let t = Tensor::from_vec(&[1, 1, 64, 64], (0..4096).map(|i| (i % 17) as f32 / 17.0).collect());
        let l = g_loss(&[0.5], &t, &t, 0.1, 4);
        assert!((l.total - 2f64.ln()).abs() < 1e-9);
        let shifted = t.map(|v| v + 1.0);
        let l = g_loss(&[0.5], &shifted, &t, 0.1, 4);
        assert!((l.total - (2f64.ln() + 25.6)).abs() < 1e-4);
    }

    #[test]
    fn d_loss_gradient() {
        let real = [0.7f64, 0.3];
        let fake = [0.2f64, 0.6];
        let f = |x: &[f64]| {
            let r: Vec<f32> = x[..2].iter().map(|&v| v as f32).collect();
            let k: Vec<f32> = x[2..].iter().map(|&v| v as f32).collect();
            d_loss(&r, &k, 0.9).loss
        };
        let l = d_loss(&[0.7, 0.3], &[0.2, 0.6], 0.9);
        let analytic: Vec<f64> = l.grad_real.iter().chain(&l.grad_fake).copied().collect();
        let x: Vec<f64> = real.iter().chain(&fake).copied().collect();
        let numeric = numeric_gradient(&x, 1e-3, f);
        assert!(max_relative_error(&analytic, &numeric, 1e-6) < 1e-4);
    }

    #[test]
    fn g_loss_gradient() {
        let gen: Vec<f64> = (0..2 * 64).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5).collect();
        let target = Tensor::from_vec(&[2, 1, 8, 8], (0..128).map(|i| ((i * 3) % 5) as f32 / 5.0).collect());
        let d_fake = [0.4f32, 0.7];
        let as_t = |x: &[f64]| Tensor::from_vec(&[2, 1, 8, 8], x.iter().map(|&v| v as f32).collect());
        let l = g_loss(&d_fake, &as_t(&gen), &target, 0.1, 4);
        let numeric = numeric_gradient(&gen, 1e-2, |x| g_loss(&d_fake, &as_t(x), &target, 0.1, 4).total);
        assert!(max_relative_error(&l.grad_generated, &numeric, 1e-4) < 1e-3);
    }

    #[test]
    fn legacy_loss_examples() {
        let t = Image::new(64, 64);
        assert_eq!(legacy_ffd_loss(&t, &t).0, 0.0);
        let mut p = t.clone();
        p.set(32, 32, 1.0);
        assert!((legacy_ffd_loss(&p, &t).0 - 1.0 / 4096.0).abs() < 1e-15);
        let mut p = t.clone();
        p.set(0, 0, 1.0);
        let sr = 64.0 / 3.5;
        let sc = 64.0 / 2.5;
        let w = (-0.5 * ((32.0f64 / sr).powi(2) + (32.0f64 / sc).powi(2))).exp();
        assert!((w - (-2.3125f64).exp()).abs() < 1e-12);
        assert!((legacy_ffd_loss(&p, &t).0 - w / 4096.0).abs() < 1e-15);
    }

    #[test]
    fn legacy_mask_peak_and_symmetry() {
        let m = legacy_mask(64, 64);
        assert_eq!(m.get(32, 32), 1.0);
        for i in 1..32 {
            for j in 1..32 {
                let v = m.get(32 + j, 32 + i);
                assert_eq!(v, m.get(32 - j, 32 + i));
                assert_eq!(v, m.get(32 + j, 32 - i));
            }
        }
    }

    #[test]
    fn legacy_loss_gradient() {
        let pred: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let target = Image::from_fn(8, 8, |x, y| (x * y) as f32 / 64.0);
        let as_img = |v: &[f64]| Image::from_vec(8, 8, v.iter().map(|&x| x as f32).collect());
        let (_, g) = legacy_ffd_loss(&as_img(&pred), &target);
        let numeric = numeric_gradient(&pred, 1e-2, |v| legacy_ffd_loss(&as_img(v), &target).0);
        assert!(max_relative_error(&g, &numeric, 1e-5) < 1e-3);
    }

    #[test]
    fn unet_generator_gradients_flow_through_skips() {
        let cfg = GeneratorConfig { batch_norm: false, ..small_gen(true) };
        let mut g = build_generator(&cfg, 4).unwrap();
        let x = Tensor::from_vec(&[1, 1, 16, 16], (0..256).map(|i| ((i * 5) % 9) as f32 / 9.0).collect());
        let r: Vec<f32> = (0..256).map(|i| ((i * 3) % 7) as f32 / 7.0 - 0.5).collect();
        g.zero_grad();
        g.forward(&x, Mode::Train);
        g.backward(&Tensor::from_vec(&[1, 1, 16, 16], r.clone()));
        let probe = |g: &Generator| -> f64 { g.infer(&x).data().iter().zip(&r).map(|(a, b)| (*a * *b) as f64).sum() };
        // first encoder conv weight
        let analytic: Vec<f64> = g.params_mut()[0].grad.data().iter().map(|&v| v as f64).collect();
        let w0: Vec<f64> = g.params_mut()[0].value.data().iter().map(|&v| v as f64).collect();
        let numeric = numeric_gradient(&w0, 1e-2, |w| {
            for (d, s) in g.params_mut()[0].value.data_mut().iter_mut().zip(w) {
                *d = *s as f32;
            }
            probe(&g)
        });
        assert!(max_relative_error(&analytic, &numeric, 1e-2) < 5e-3);
    }

    #[test]
    fn inference_is_deterministic() {
        let g = build_generator(&small_gen(false), 2).unwrap();
        let x = Image::from_fn(16, 16, |x, y| (x as f32 - y as f32) / 16.0);
        let a = ffd_infer(&g, &x);
        assert_eq!(a, ffd_infer(&g, &x));
        assert!(a.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn discriminator_step_does_not_increase_its_loss() {
        let d_cfg = DiscriminatorConfig { input_size: 16, filters: vec![4, 8], ..DiscriminatorConfig::desk() };
        let mut d = build_discriminator(&d_cfg, 3).unwrap();
        let real = Tensor::from_vec(&[4, 1, 16, 16], (0..1024).map(|i| ((i * 7) % 13) as f32 / 13.0).collect());
        let fake = Tensor::from_vec(&[4, 1, 16, 16], (0..1024).map(|i| -((i * 5) % 11) as f32 / 11.0).collect());
        let mut opt = Sgd::new(1e-3, 0.0);
        let before = discriminator_step(&mut d, &mut opt, &real, &fake, 0.9);
        let pr = d.forward(&real, Mode::Train);
        let pf = d.forward(&fake, Mode::Train);
        let after = d_loss(pr.data(), &[], 0.9).loss + d_loss(&[], pf.data(), 0.9).loss;
        assert!(after <= before, "{after} > {before}");
    }

    fn tiny_pairs() -> Vec<(Image, Image)> {
        (0..4)
            .map(|k| {
                let depth = Image::from_fn(16, 16, |x, y| ((x + k) as f32 * 0.3).sin() + (y as f32 * 0.2).cos());
                let gray = depth.map(|v| (v * 0.5).tanh());
                (depth, gray)
            })
            .collect()
    }

    #[test]
    fn zero_learning_rates_freeze_history() {
        let d_cfg = DiscriminatorConfig { input_size: 16, filters: vec![4, 8], ..DiscriminatorConfig::desk() };
        let mut model = build_ffd(&GeneratorConfig { batch_norm: false, ..small_gen(false) }, &d_cfg, 0).unwrap();
        let hyper = GanHyper { batch_size: 4, lr_generator: 0.0, lr_discriminator: 0.0, steps: 3, ..Default::default() };
        let h = train_ffd(&mut model, &tiny_pairs(), &hyper).unwrap();
        for s in &h[1..] {
            assert!((s.g_sse - h[0].g_sse).abs() < 1e-9);
            assert!((s.d_loss - h[0].d_loss).abs() < 1e-6);
        }
    }

    #[test]
    fn training_is_reproducible_and_checkpoints_round_trip() {
        let d_cfg = DiscriminatorConfig { input_size: 16, filters: vec![4, 8], ..DiscriminatorConfig::desk() };
        let hyper = GanHyper { batch_size: 2, lr_generator: 1e-3, lr_discriminator: 1e-3, steps: 4, seed: 9, ..Default::default() };
        let mut a = build_ffd(&small_gen(false), &d_cfg, 5).unwrap();
        let mut b = build_ffd(&small_gen(false), &d_cfg, 5).unwrap();
        let ha = train_ffd(&mut a, &tiny_pairs(), &hyper).unwrap();
        let hb = train_ffd(&mut b, &tiny_pairs(), &hyper).unwrap();
        assert_eq!(ha, hb);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ffd.ckpt");
        a.save(&path).unwrap();
        let c = Ffd::load(&path).unwrap();
        let x = &tiny_pairs()[0].0;
        assert_eq!(ffd_infer(&a.generator, x), ffd_infer(&c.generator, x));
        write_history_csv(&dir.path().join("h.csv"), &ha).unwrap();
        let text = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
        assert!(text.starts_with("step,d_loss,g_adv,g_sse"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn empty_pairs_rejected() {
        let mut m = build_ffd(&small_gen(false), &DiscriminatorConfig { input_size: 16, filters: vec![4], ..DiscriminatorConfig::desk() }, 0).unwrap();
        assert!(matches!(train_ffd(&mut m, &[], &GanHyper::default()), Err(FfdError::MissingPairs)));
    }
}
