//! Pose regression: the shallow branch network, fusion operators, the
//! three-branch trident with its two-phase training, and the shoulder net.

use std::path::Path;

use headpose_nn::layers::{Conv2d, Dropout, Linear, MaxPool2d, Tanh};
use headpose_nn::{Checkpoint, CheckpointError, Layer, Mode, Optimizer, Param, Sequential, Sgd, StepDecay, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::common::{epoch_batches, ConfigError};
use crate::geometry::PoseAngles;
use crate::image::Image;
use crate::motion::MotionImage;

/// Degrees represented by a raw network output of 1.
pub const ANGLE_SCALE: f64 = 180.0;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sample {0} has no pose annotation")]
    MissingAnnotation(String),
    #[error("branch weights changed while frozen")]
    FreezeViolated,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("history i/o: {0}")]
    History(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub conv_kernels: Vec<usize>,
    pub conv_filters: Vec<usize>,
    /// Number of leading conv layers followed by 2×2 max pooling.
    pub pooled: usize,
    pub head_fc: Vec<usize>,
    pub dropout: f32,
}

impl Default for BranchConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            input_channels: 1,
            conv_kernels: vec![5, 5, 4, 3, 3],
            conv_filters: vec![32, 32, 32, 32, 128],
            pooled: 3,
            head_fc: vec![128, 84, 3],
            dropout: 0.5,
        }
    }
}

impl BranchConfig {
    pub fn with_channels(&self, channels: usize) -> Self {
        Self { input_channels: channels, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.conv_kernels.len() != 5 || self.conv_filters.len() != 5 {
            return Err(ConfigError("a branch has exactly five conv layers".into()));
        }
        if self.pooled > 5 {
            return Err(ConfigError("more pooled stages than conv layers".into()));
        }
        if self.head_fc.len() < 2 || self.head_fc.last() != Some(&3) {
            return Err(ConfigError("branch head needs a tap layer and a 3-unit output".into()));
        }
        if self.input_channels == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError("input channels must be positive and dropout in [0, 1)".into()));
        }
        Ok(())
    }

    /// Width of the tap point (penultimate FC layer).
    pub fn tap_dim(&self) -> usize {
        self.head_fc[self.head_fc.len() - 2]
    }
}

/// Conv stack plus FC layers up to the tap point (`features`), and the
/// final 3-unit layer (`head`) used when the branch is trained alone.
pub struct Branch {
    pub config: BranchConfig,
    pub features: Sequential,
    pub head: Sequential,
}

pub fn build_branch(config: &BranchConfig, seed: u64) -> Result<Branch, ConfigError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Sequential::new();
    let mut channels = config.input_channels;
    for (i, (&k, &f)) in config.conv_kernels.iter().zip(&config.conv_filters).enumerate() {
        let conv = Conv2d::new(&mut rng, channels, f, k, 1, 0);
        let conv = if i == 0 { conv.without_input_grad() } else { conv };
        features.push(format!("conv{i}"), conv);
        features.push(format!("tanh{i}"), Tanh::new());
        if i < config.pooled {
            features.push(format!("pool{i}"), MaxPool2d::new(2));
        }
        channels = f;
    }
    let s = config.input_size;
    let shape = features.output_shape(&[1, config.input_channels, s, s]).map_err(ConfigError)?;
    let mut width: usize = shape[1..].iter().product();
    let hidden = &config.head_fc[..config.head_fc.len() - 1];
    for (i, &units) in hidden.iter().enumerate() {
        if i > 0 && config.dropout > 0.0 {
            features.push(format!("drop{i}"), Dropout::new(config.dropout, seed.wrapping_add(100 + i as u64)));
        }
        features.push(format!("fc{i}"), Linear::new(&mut rng, width, units));
        features.push(format!("fc{i}_tanh"), Tanh::new());
        width = units;
    }
    let mut head = Sequential::new();
    if config.dropout > 0.0 {
        head.push("drop", Dropout::new(config.dropout, seed.wrapping_add(200)));
    }
    head.push("fc", Linear::new(&mut rng, width, 3));
    head.push("tanh", Tanh::new());
    Ok(Branch { config: config.clone(), features, head })
}

impl Branch {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let t = self.features.forward(x, mode);
        self.head.forward(&t, mode)
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        self.head.infer(&self.features.infer(x))
    }

    /// Tap-point features, shape `(n, tap_dim)`.
    pub fn infer_tap(&self, x: &Tensor) -> Tensor {
        self.features.infer(x)
    }

    pub fn backward(&mut self, grad: &Tensor) {
        let g = self.head.backward(grad);
        self.features.backward(&g);
    }

    pub fn zero_grad(&mut self) {
        self.features.zero_grad();
        self.head.zero_grad();
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.features.params_mut();
        v.extend(self.head.params_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.features.param_count() + self.head.param_count()
    }

    pub fn named_state(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<_> = self.features.named_state().into_iter().map(|(n, t)| (format!("features.{n}"), t)).collect();
        v.extend(self.head.named_state().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        v
    }

    pub fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v: Vec<_> =
            self.features.named_state_mut().into_iter().map(|(n, t)| (format!("features.{n}"), t)).collect();
        v.extend(self.head.named_state_mut().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        v
    }

    /// Single-branch pose prediction (degrees) for one input stack.
    pub fn predict(&self, input: &Tensor) -> PoseAngles {
        let y = self.infer(input);
        decode_pose([y.data()[0], y.data()[1], y.data()[2]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMethod {
    Multiplication,
    Concatenation,
    Convolution,
    ConvThenConcat,
}

/// Fusion of two or three feature maps `(n, d, h, w)`.
///
/// With three inputs: multiplication takes the product of all three,
/// concatenation stacks all three, convolution fuses the first pair and
/// then fuses the result with the third, and conv-then-concat stacks
/// `conv(a, b)` and `conv(a, c)`.
pub struct Fusion {
    pub method: FusionMethod,
    dims: Vec<usize>,
    convs: Vec<Conv2d>,
    cache: Option<Vec<Tensor>>,
}

fn halved(da: usize, db: usize) -> Result<usize, ConfigError> {
    if (da + db) % 2 != 0 {
        return Err(ConfigError(format!("conv fusion of {da}+{db} channels: sum must be even")));
    }
    Ok((da + db) / 2)
}

impl Fusion {
    pub fn new(method: FusionMethod, dims: &[usize], seed: u64) -> Result<Self, ConfigError> {
        if !(2..=3).contains(&dims.len()) || dims.contains(&0) {
            return Err(ConfigError(format!("fusion takes two or three non-empty inputs, got {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::new();
        match method {
            FusionMethod::Multiplication => {
                if dims.iter().any(|&d| d != dims[0]) {
                    return Err(ConfigError(format!("multiplication needs equal channel counts, got {dims:?}")));
                }
            }
            FusionMethod::Concatenation => {}
            FusionMethod::Convolution => {
                let d1 = halved(dims[0], dims[1])?;
                convs.push(Conv2d::new(&mut rng, dims[0] + dims[1], d1, 1, 1, 0));
                if dims.len() == 3 {
                    let d2 = halved(d1, dims[2])?;
                    convs.push(Conv2d::new(&mut rng, d1 + dims[2], d2, 1, 1, 0));
                }
            }
            FusionMethod::ConvThenConcat => {
                if dims.len() != 3 {
                    return Err(ConfigError("conv-then-concat fuses exactly three inputs".into()));
                }
                convs.push(Conv2d::new(&mut rng, dims[0] + dims[1], halved(dims[0], dims[1])?, 1, 1, 0));
                convs.push(Conv2d::new(&mut rng, dims[0] + dims[2], halved(dims[0], dims[2])?, 1, 1, 0));
            }
        }
        Ok(Self { method, dims: dims.to_vec(), convs, cache: None })
    }

    pub fn out_dim(&self) -> usize {
        let d = &self.dims;
        match self.method {
            FusionMethod::Multiplication => d[0],
            FusionMethod::Concatenation => d.iter().sum(),
            FusionMethod::Convolution => {
                let d1 = (d[0] + d[1]) / 2;
                if d.len() == 3 {
                    (d1 + d[2]) / 2
                } else {
                    d1
                }
            }
            FusionMethod::ConvThenConcat => (d[0] + d[1]) / 2 + (d[0] + d[2]) / 2,
        }
    }

    fn check(&self, inputs: &[&Tensor]) -> Result<(), PoseError> {
        if inputs.len() != self.dims.len() {
            return Err(PoseError::ShapeMismatch(format!("expected {} inputs, got {}", self.dims.len(), inputs.len())));
        }
        for (t, &d) in inputs.iter().zip(&self.dims) {
            if t.shape().len() != 4 || t.shape()[1] != d || t.shape()[0] != inputs[0].shape()[0] || t.shape()[2..] != inputs[0].shape()[2..] {
                return Err(PoseError::ShapeMismatch(format!("input shape {:?} does not match {d} channels", t.shape())));
            }
        }
        Ok(())
    }

    fn run(&mut self, inputs: &[&Tensor], mode: Option<Mode>) -> Tensor {
        let cat = Tensor::concat_channels;
        let apply = |convs: &mut Vec<Conv2d>, i: usize, x: &Tensor| match mode {
            Some(m) => convs[i].forward(x, m),
            None => convs[i].infer(x),
        };
        match self.method {
            FusionMethod::Multiplication => inputs[1..].iter().fold(inputs[0].clone(), |acc, t| acc.mul_elem(t)),
            FusionMethod::Concatenation => inputs[1..].iter().fold(inputs[0].clone(), |acc, t| cat(&acc, t)),
            FusionMethod::Convolution => {
                let f1 = apply(&mut self.convs, 0, &cat(inputs[0], inputs[1]));
                if inputs.len() == 3 {
                    apply(&mut self.convs, 1, &cat(&f1, inputs[2]))
                } else {
                    f1
                }
            }
            FusionMethod::ConvThenConcat => {
                let f1 = apply(&mut self.convs, 0, &cat(inputs[0], inputs[1]));
                let f2 = apply(&mut self.convs, 1, &cat(inputs[0], inputs[2]));
                cat(&f1, &f2)
            }
        }
    }

    pub fn forward(&mut self, inputs: &[&Tensor], mode: Mode) -> Result<Tensor, PoseError> {
        self.check(inputs)?;
        self.cache = Some(inputs.iter().map(|t| (*t).clone()).collect());
        Ok(self.run(inputs, Some(mode)))
    }

    pub fn infer(&self, inputs: &[&Tensor]) -> Result<Tensor, PoseError> {
        self.check(inputs)?;
        let cat = Tensor::concat_channels;
        Ok(match self.method {
            FusionMethod::Multiplication => inputs[1..].iter().fold(inputs[0].clone(), |acc, t| acc.mul_elem(t)),
            FusionMethod::Concatenation => inputs[1..].iter().fold(inputs[0].clone(), |acc, t| cat(&acc, t)),
            FusionMethod::Convolution => {
                let f1 = self.convs[0].infer(&cat(inputs[0], inputs[1]));
                if inputs.len() == 3 {
                    self.convs[1].infer(&cat(&f1, inputs[2]))
                } else {
                    f1
                }
            }
            FusionMethod::ConvThenConcat => {
                let f1 = self.convs[0].infer(&cat(inputs[0], inputs[1]));
                let f2 = self.convs[1].infer(&cat(inputs[0], inputs[2]));
                cat(&f1, &f2)
            }
        })
    }

    /// Gradients w.r.t. each input of the last `forward`.
    pub fn backward(&mut self, grad: &Tensor) -> Vec<Tensor> {
        let inputs = self.cache.as_ref().expect("fusion: backward before forward");
        let d = &self.dims;
        match self.method {
            FusionMethod::Multiplication => (0..inputs.len())
                .map(|i| {
                    inputs.iter().enumerate().filter(|(j, _)| *j != i).fold(grad.clone(), |acc, (_, t)| acc.mul_elem(t))
                })
                .collect(),
            FusionMethod::Concatenation => {
                let mut out = Vec::new();
                let mut rest = grad.clone();
                for &di in &d[..d.len() - 1] {
                    let (head, tail) = rest.split_channels(di);
                    out.push(head);
                    rest = tail;
                }
                out.push(rest);
                out
            }
            FusionMethod::Convolution => {
                let mut g = grad.clone();
                let mut gc = None;
                if d.len() == 3 {
                    let g2 = self.convs[1].backward(&g);
                    let d1 = (d[0] + d[1]) / 2;
                    let (g1, c) = g2.split_channels(d1);
                    g = g1;
                    gc = Some(c);
                }
                let (ga, gb) = self.convs[0].backward(&g).split_channels(d[0]);
                let mut out = vec![ga, gb];
                out.extend(gc);
                out
            }
            FusionMethod::ConvThenConcat => {
                let (g1, g2) = grad.split_channels((d[0] + d[1]) / 2);
                let (mut ga, gb) = self.convs[0].backward(&g1).split_channels(d[0]);
                let (ga2, gc) = self.convs[1].backward(&g2).split_channels(d[0]);
                ga.add_assign(&ga2);
                vec![ga, gb, gc]
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.convs.iter_mut().flat_map(|c| c.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn named_state(&self) -> Vec<(String, &Tensor)> {
        self.convs
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.state().into_iter().map(move |(n, t)| (format!("conv{i}.{n}"), t)))
            .collect()
    }

    pub fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.convs
            .iter_mut()
            .enumerate()
            .flat_map(|(i, c)| c.state_mut().into_iter().map(move |(n, t)| (format!("conv{i}.{n}"), t)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pitch: f64,
    pub roll: f64,
    pub yaw: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { pitch: 0.2, roll: 0.35, yaw: 0.45 }
    }
}

impl LossWeights {
    pub fn to_array(self) -> [f64; 3] {
        [self.pitch, self.roll, self.yaw]
    }
}

/// `mean_n sum_i |w_i (y_i - yhat_i)|` over rows of `(pitch, roll, yaw)`,
/// with its gradient w.r.t. `pred`.
pub fn weighted_l2_loss(pred: &[f32], gt: &[f32], w: &LossWeights) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), gt.len());
    assert_eq!(pred.len() % 3, 0);
    let n = (pred.len() / 3).max(1) as f64;
    let w = w.to_array();
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .enumerate()
        .map(|(k, (&p, &t))| {
            let d = p as f64 - t as f64;
            loss += (w[k % 3] * d).abs();
            w[k % 3] * d.signum() * (d != 0.0) as u8 as f64 / n
        })
        .collect();
    (loss / n, grad)
}

pub fn encode_pose(p: &PoseAngles) -> [f32; 3] {
    p.to_array().map(|v| (v / ANGLE_SCALE) as f32)
}

pub fn decode_pose(raw: [f32; 3]) -> PoseAngles {
    PoseAngles::from_array(raw.map(|v| v as f64 * ANGLE_SCALE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TridentConfig {
    pub branch: BranchConfig,
    pub fusion: FusionMethod,
    pub head_fc: Vec<usize>,
    pub dropout: f32,
}

impl Default for TridentConfig {
    fn default() -> Self {
        Self { branch: BranchConfig::default(), fusion: FusionMethod::ConvThenConcat, head_fc: vec![128, 84, 3], dropout: 0.5 }
    }
}

/// Input channel counts of the depth, FfD and motion branches.
pub const BRANCH_CHANNELS: [usize; 3] = [1, 1, 2];

pub struct Trident {
    pub config: TridentConfig,
    /// Depth, FfD and motion branches, in that order.
    pub branches: Vec<Branch>,
    pub fusion: Fusion,
    pub head: Sequential,
}

/// Builds the fusion and regression head on top of three branches.
pub fn build_trident(
    branch_depth: Branch,
    branch_ffd: Branch,
    branch_motion: Branch,
    fusion: FusionMethod,
    seed: u64,
) -> Result<Trident, PoseError> {
    let dims: Vec<usize> = [&branch_depth, &branch_ffd, &branch_motion].iter().map(|b| b.config.tap_dim()).collect();
    if dims.iter().any(|&d| d != dims[0]) {
        return Err(PoseError::ShapeMismatch(format!("branch tap dimensions differ: {dims:?}")));
    }
    let config = TridentConfig { branch: branch_depth.config.with_channels(1), fusion, ..TridentConfig::default() };
    let fusion = Fusion::new(fusion, &dims, seed)?;
    let head = build_head(fusion.out_dim(), &config.head_fc, config.dropout, seed)?;
    Ok(Trident { config, branches: vec![branch_depth, branch_ffd, branch_motion], fusion, head })
}

fn build_head(input: usize, sizes: &[usize], dropout: f32, seed: u64) -> Result<Sequential, ConfigError> {
    if sizes.last() != Some(&3) {
        return Err(ConfigError("regression head must end in 3 units".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(7));
    let mut head = Sequential::new();
    let mut width = input;
    for (i, &units) in sizes.iter().enumerate() {
        if i > 0 && dropout > 0.0 {
            head.push(format!("drop{i}"), Dropout::new(dropout, seed.wrapping_add(300 + i as u64)));
        }
        head.push(format!("fc{i}"), Linear::new(&mut rng, width, units));
        head.push(format!("fc{i}_tanh"), Tanh::new());
        width = units;
    }
    Ok(head)
}

/// Builds a trident with freshly initialised branches.
pub fn new_trident(config: &TridentConfig, seed: u64) -> Result<Trident, PoseError> {
    let b: Vec<Branch> = BRANCH_CHANNELS
        .iter()
        .enumerate()
        .map(|(i, &c)| build_branch(&config.branch.with_channels(c), seed.wrapping_add(i as u64 * 1000)))
        .collect::<Result<_, _>>()?;
    let mut it = b.into_iter();
    let (d, f, m) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    let mut t = build_trident(d, f, m, config.fusion, seed.wrapping_add(5000))?;
    t.head = build_head(t.fusion.out_dim(), &config.head_fc, config.dropout, seed.wrapping_add(5000))?;
    t.config = config.clone();
    Ok(t)
}

fn as_map(t: &Tensor) -> Tensor {
    let n = t.batch();
    t.clone().reshape(&[n, t.item_len(), 1, 1])
}

impl Trident {
    /// Tap features of each branch for stacked inputs.
    pub fn taps(&self, inputs: &[Tensor; 3]) -> [Tensor; 3] {
        [0, 1, 2].map(|i| as_map(&self.branches[i].infer_tap(&inputs[i])))
    }

    /// Raw `(n, 3)` outputs from precomputed taps.
    pub fn infer_from_taps(&self, taps: &[Tensor; 3]) -> Result<Tensor, PoseError> {
        let fused = self.fusion.infer(&[&taps[0], &taps[1], &taps[2]])?;
        Ok(self.head.infer(&fused))
    }

    pub fn infer(&self, inputs: &[Tensor; 3]) -> Result<Tensor, PoseError> {
        self.infer_from_taps(&self.taps(inputs))
    }

    fn head_forward(&mut self, taps: &[Tensor; 3], mode: Mode) -> Result<Tensor, PoseError> {
        let fused = self.fusion.forward(&[&taps[0], &taps[1], &taps[2]], mode)?;
        Ok(self.head.forward(&fused, mode))
    }

    fn head_backward(&mut self, grad: &Tensor) {
        let g = self.head.backward(grad);
        let n = g.batch();
        self.fusion.backward(&g.reshape(&[n, self.fusion.out_dim(), 1, 1]));
    }

    fn head_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fusion.params_mut();
        v.extend(self.head.params_mut());
        v
    }

    pub fn named_state(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        for (name, b) in ["depth", "ffd", "motion"].iter().zip(&self.branches) {
            v.extend(b.named_state().into_iter().map(|(n, t)| (format!("{name}.{n}"), t)));
        }
        v.extend(self.fusion.named_state().into_iter().map(|(n, t)| (format!("fusion.{n}"), t)));
        v.extend(self.head.named_state().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        v
    }

    pub fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = Vec::new();
        for (name, b) in ["depth", "ffd", "motion"].iter().zip(&mut self.branches) {
            v.extend(b.named_state_mut().into_iter().map(|(n, t)| (format!("{name}.{n}"), t)));
        }
        v.extend(self.fusion.named_state_mut().into_iter().map(|(n, t)| (format!("fusion.{n}"), t)));
        v.extend(self.head.named_state_mut().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        v
    }

    /// Bit patterns of every branch tensor, for freeze checks.
    pub fn branch_fingerprint(&self) -> Vec<u32> {
        self.branches
            .iter()
            .flat_map(|b| b.named_state().into_iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), PoseError> {
        let config = serde_json::to_value(&self.config).expect("config serialises");
        Checkpoint::new(TRIDENT_KIND, config).with_tensors("", self.named_state()).save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PoseError> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(TRIDENT_KIND)?;
        let config: TridentConfig =
            serde_json::from_value(ck.config.clone()).map_err(|e| ConfigError(format!("trident config: {e}")))?;
        let mut t = new_trident(&config, 0)?;
        ck.restore("", t.named_state_mut())?;
        Ok(t)
    }
}

pub const TRIDENT_KIND: &str = "trident";
pub const SHOULDER_KIND: &str = "shoulder";

/// Stacks one network input per sample into `(n, c, h, w)`.
pub fn stack_inputs(items: &[Vec<f32>], channels: usize, size: usize) -> Tensor {
    let mut data = Vec::with_capacity(items.len() * channels * size * size);
    for it in items {
        assert_eq!(it.len(), channels * size * size, "input size mismatch");
        data.extend_from_slice(it);
    }
    Tensor::from_vec(&[items.len(), channels, size, size], data)
}

/// Network inputs and label for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    pub id: String,
    pub depth: Image,
    pub ffd: Image,
    pub motion: MotionImage,
    pub pose: Option<PoseAngles>,
}

impl PoseSample {
    pub fn inputs(samples: &[&PoseSample]) -> [Tensor; 3] {
        let s = samples[0].depth.width();
        [
            stack_inputs(&samples.iter().map(|p| p.depth.data().to_vec()).collect::<Vec<_>>(), 1, s),
            stack_inputs(&samples.iter().map(|p| p.ffd.data().to_vec()).collect::<Vec<_>>(), 1, s),
            stack_inputs(&samples.iter().map(|p| p.motion.to_planes()).collect::<Vec<_>>(), 2, s),
        ]
    }
}

pub fn predict_pose(trident: &Trident, depth: &Image, ffd: &Image, motion: &MotionImage) -> Result<PoseAngles, PoseError> {
    let sample = PoseSample { id: String::new(), depth: depth.clone(), ffd: ffd.clone(), motion: motion.clone(), pose: None };
    let y = trident.infer(&PoseSample::inputs(&[&sample]))?;
    Ok(decode_pose([y.data()[0], y.data()[1], y.data()[2]]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseHyper {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub halve_every: usize,
    pub momentum: f32,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for PoseHyper {
    fn default() -> Self {
        Self {
            phase1_epochs: 60,
            phase2_epochs: 60,
            batch_size: 8,
            learning_rate: 0.1,
            halve_every: 15,
            momentum: 0.0,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl PoseHyper {
    /// Schedule that fits a few dozen frames on one CPU core within minutes.
    pub fn desk() -> Self {
        Self { phase1_epochs: 100, phase2_epochs: 100, learning_rate: 0.01, halve_every: 20, momentum: 0.9, ..Self::default() }
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        if self.halve_every == 0 {
            return self.learning_rate;
        }
        StepDecay { initial: self.learning_rate, factor: 0.5, every: self.halve_every }.lr_at(epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub err_pitch: f64,
    pub err_roll: f64,
    pub err_yaw: f64,
    pub lr: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseReport {
    pub phase1: Vec<Vec<EpochRecord>>,
    pub phase2: Vec<EpochRecord>,
    pub freeze_verified: bool,
}

fn labels(samples: &[(String, Option<PoseAngles>)]) -> Result<Vec<[f32; 3]>, PoseError> {
    samples
        .iter()
        .map(|(id, p)| p.as_ref().map(encode_pose).ok_or_else(|| PoseError::MissingAnnotation(id.clone())))
        .collect()
}

/// Shared SGD loop: `step` runs forward/backward on a batch and returns
/// the raw outputs; parameters are updated by `update`.
fn sgd_epochs<M>(
    model: &mut M,
    n: usize,
    targets: &[[f32; 3]],
    epochs: usize,
    hyper: &PoseHyper,
    seed: u64,
    mut step: impl FnMut(&mut M, &[usize], &dyn Fn(&Tensor) -> (f64, Tensor)) -> Tensor,
    mut params: impl FnMut(&mut M) -> Vec<&mut Param>,
) -> Vec<EpochRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Sgd::new(hyper.learning_rate, hyper.momentum);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        opt.set_learning_rate(hyper.lr_at(epoch));
        let mut loss_sum = 0.0;
        let mut err = [0.0f64; 3];
        for batch in epoch_batches(n, hyper.batch_size, &mut rng) {
            let t: Vec<f32> = batch.iter().flat_map(|&i| targets[i]).collect();
            let loss_fn = |y: &Tensor| {
                let (l, g) = weighted_l2_loss(y.data(), &t, &hyper.weights);
                (l, Tensor::from_vec(y.shape(), g.into_iter().map(|v| v as f32).collect()))
            };
            let y = step(model, &batch, &loss_fn);
            loss_sum += loss_fn(&y).0 * batch.len() as f64;
            for (k, (p, q)) in y.data().iter().zip(&t).enumerate() {
                err[k % 3] += ((p - q).abs() as f64) * ANGLE_SCALE;
            }
            let mut ps = params(model);
            opt.step(&mut ps);
        }
        let nf = n.max(1) as f64;
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / nf,
            err_pitch: err[0] / nf,
            err_roll: err[1] / nf,
            err_yaw: err[2] / nf,
            lr: opt.learning_rate(),
        });
    }
    history
}

/// Trains a branch with its own head on stacked inputs `(n, c, s, s)`.
pub fn train_branch(
    branch: &mut Branch,
    inputs: &Tensor,
    poses: &[(String, Option<PoseAngles>)],
    hyper: &PoseHyper,
    epochs: usize,
) -> Result<Vec<EpochRecord>, PoseError> {
    let targets = labels(poses)?;
    Ok(sgd_epochs(
        branch,
        inputs.batch(),
        &targets,
        epochs,
        hyper,
        hyper.seed,
        |b, idx, loss| {
            let x = inputs.gather(idx);
            b.zero_grad();
            let y = b.forward(&x, Mode::Train);
            b.backward(&loss(&y).1);
            y
        },
        |b| b.params_mut(),
    ))
}

/// Phase 1 trains every branch alone; phase 2 freezes them and trains
/// only the fusion and regression head on precomputed tap features.
pub fn train_two_phase(trident: &mut Trident, samples: &[&PoseSample], hyper: &PoseHyper) -> Result<TwoPhaseReport, PoseError> {
    let poses: Vec<(String, Option<PoseAngles>)> = samples.iter().map(|s| (s.id.clone(), s.pose)).collect();
    let targets = labels(&poses)?;
    let inputs = PoseSample::inputs(samples);
    let mut phase1 = Vec::new();
    for (i, branch) in trident.branches.iter_mut().enumerate() {
        let h = PoseHyper { seed: hyper.seed.wrapping_add(i as u64 + 1), ..hyper.clone() };
        phase1.push(train_branch(branch, &inputs[i], &poses, &h, hyper.phase1_epochs)?);
    }

    let before = trident.branch_fingerprint();
    let taps = trident.taps(&inputs);
    let phase2 = sgd_epochs(
        trident,
        samples.len(),
        &targets,
        hyper.phase2_epochs,
        hyper,
        hyper.seed.wrapping_add(17),
        |t, idx, loss| {
            let batch_taps = [taps[0].gather(idx), taps[1].gather(idx), taps[2].gather(idx)];
            t.fusion.zero_grad();
            t.head.zero_grad();
            let y = t.head_forward(&batch_taps, Mode::Train).expect("tap shapes fixed at build time");
            t.head_backward(&loss(&y).1);
            y
        },
        |t| t.head_params_mut(),
    );
    let freeze_verified = trident.branch_fingerprint() == before;
    if !freeze_verified {
        return Err(PoseError::FreezeViolated);
    }
    Ok(TwoPhaseReport { phase1, phase2, freeze_verified })
}

pub fn write_epoch_csv(path: &Path, history: &[EpochRecord]) -> Result<(), PoseError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PoseError::History(e.to_string()))?;
    for h in history {
        w.serialize(h).map_err(|e| PoseError::History(e.to_string()))?;
    }
    w.flush().map_err(|e| PoseError::History(e.to_string()))
}

/// Shoulder pose network: one branch with its own head.
pub fn build_shoulder_net(config: &BranchConfig, seed: u64) -> Result<Branch, ConfigError> {
    build_branch(&config.with_channels(1), seed)
}

pub fn predict_shoulder_pose(net: &Branch, crop: &Image) -> PoseAngles {
    net.predict(&stack_inputs(&[crop.data().to_vec()], 1, crop.width()))
}

pub fn train_shoulder_net(
    net: &mut Branch,
    crops: &[(String, &Image, Option<PoseAngles>)],
    hyper: &PoseHyper,
) -> Result<Vec<EpochRecord>, PoseError> {
    let size = crops.first().map(|c| c.1.width()).unwrap_or(net.config.input_size);
    let inputs = stack_inputs(&crops.iter().map(|c| c.1.data().to_vec()).collect::<Vec<_>>(), 1, size);
    let poses: Vec<_> = crops.iter().map(|c| (c.0.clone(), c.2)).collect();
    train_branch(net, &inputs, &poses, hyper, hyper.phase1_epochs)
}

pub fn save_branch(branch: &Branch, kind: &str, path: &Path) -> Result<(), PoseError> {
    let config = serde_json::to_value(&branch.config).expect("config serialises");
    Checkpoint::new(kind, config).with_tensors("", branch.named_state()).save(path)?;
    Ok(())
}

pub fn load_branch(kind: &str, path: &Path) -> Result<Branch, PoseError> {
    let ck = Checkpoint::load(path)?;
    ck.expect_kind(kind)?;
    let config: BranchConfig =
        serde_json::from_value(ck.config.clone()).map_err(|e| ConfigError(format!("branch config: {e}")))?;
    let mut b = build_branch(&config, 0)?;
    ck.restore("", b.named_state_mut())?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use headpose_nn::gradcheck::{max_relative_error, numeric_gradient};

    fn ramp(shape: &[usize], k: usize) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| (((i * k) % 23) as f32 / 23.0) - 0.5).collect())
    }

    #[test]
    fn branch_shapes() {
        let b = build_branch(&BranchConfig::default(), 1).unwrap();
        assert_eq!(b.config.tap_dim(), 84);
        let x = ramp(&[4, 1, 64, 64], 3);
        assert_eq!(b.infer_tap(&x).shape(), &[4, 84]);
        let y = b.infer(&x);
        assert_eq!(y.shape(), &[4, 3]);
        assert!(y.data().iter().all(|v| v.abs() < 1.0));
        let trace = b.features.shape_trace(&[1, 1, 64, 64]).unwrap();
        let conv4 = trace.iter().find(|(n, _)| n == "tanh4").unwrap();
        assert_eq!(conv4.1, vec![1, 128, 1, 1]);
    }

    #[test]
    fn branch_config_invariants() {
        let mut c = BranchConfig::default();
        c.conv_kernels.pop();
        assert!(build_branch(&c, 0).is_err());
        let c = BranchConfig { head_fc: vec![128, 84, 2], ..BranchConfig::default() };
        assert!(build_branch(&c, 0).is_err());
    }

    #[test]
    fn loss_examples_and_gradient() {
        let w = LossWeights::default();
        assert_eq!(weighted_l2_loss(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3], &w).0, 0.0);
        let (l, _) = weighted_l2_loss(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0], &w);
        assert!((l - 1.0).abs() < 1e-12);
        let pred = [0.3f64, -0.2, 0.5, 0.1, 0.4, -0.6];
        let gt = [0.1f32, 0.1, 0.1, -0.3, 0.2, 0.2];
        let as32 = |x: &[f64]| x.iter().map(|&v| v as f32).collect::<Vec<_>>();
        let (_, g) = weighted_l2_loss(&as32(&pred), &gt, &w);
        let numeric = numeric_gradient(&pred, 1e-3, |x| weighted_l2_loss(&as32(x), &gt, &w).0);
        assert!(max_relative_error(&g, &numeric, 1e-6) < 1e-4);
    }

    #[test]
    fn pose_scaling() {
        assert_eq!(decode_pose([0.0, 0.0, 0.0]), PoseAngles::new(0.0, 0.0, 0.0));
        assert_eq!(decode_pose([0.5, 0.0, -0.25]), PoseAngles::new(90.0, 0.0, -45.0));
        for raw in [[0.1f32, -0.7, 0.33], [0.999, -0.999, 0.0]] {
            assert_eq!(encode_pose(&decode_pose(raw)), raw);
        }
    }

    #[test]
    fn fusion_contracts() {
        let a = ramp(&[2, 84, 1, 1], 5);
        let ones = Tensor::full(&[2, 84, 1, 1], 1.0);
        let f = Fusion::new(FusionMethod::Multiplication, &[84, 84], 0).unwrap();
        assert_eq!(f.infer(&[&a, &ones]).unwrap(), a);
        let f = Fusion::new(FusionMethod::Concatenation, &[84, 84], 0).unwrap();
        assert_eq!(f.out_dim(), 168);
        assert_eq!(f.infer(&[&a, &ones]).unwrap().shape(), &[2, 168, 1, 1]);
        let f = Fusion::new(FusionMethod::Convolution, &[84, 84], 0).unwrap();
        assert_eq!(f.infer(&[&a, &ones]).unwrap().shape(), &[2, 84, 1, 1]);
        let f = Fusion::new(FusionMethod::ConvThenConcat, &[84, 84, 84], 0).unwrap();
        assert_eq!(f.infer(&[&a, &ones, &a]).unwrap().shape(), &[2, 168, 1, 1]);
        assert!(Fusion::new(FusionMethod::Multiplication, &[84, 83], 0).is_err());
        assert!(Fusion::new(FusionMethod::Convolution, &[84, 83], 0).is_err());
        let f = Fusion::new(FusionMethod::Concatenation, &[84, 84], 0).unwrap();
        assert!(f.infer(&[&a, &ramp(&[2, 80, 1, 1], 1)]).is_err());
    }

    #[test]
    fn fusion_backward_matches_finite_differences() {
        for method in [FusionMethod::Multiplication, FusionMethod::Concatenation, FusionMethod::Convolution, FusionMethod::ConvThenConcat] {
            let mut f = Fusion::new(method, &[4, 4, 4], 3).unwrap();
            let inputs = [ramp(&[2, 4, 2, 2], 3), ramp(&[2, 4, 2, 2], 7), ramp(&[2, 4, 2, 2], 11)];
            let out = f.forward(&[&inputs[0], &inputs[1], &inputs[2]], Mode::Train).unwrap();
            let r = ramp(out.shape(), 13);
            let grads = f.backward(&r);
            for k in 0..3 {
                let x0: Vec<f64> = inputs[k].data().iter().map(|&v| v as f64).collect();
                let numeric = numeric_gradient(&x0, 1e-2, |x| {
                    let mut ins = inputs.clone();
                    ins[k] = Tensor::from_vec(inputs[k].shape(), x.iter().map(|&v| v as f32).collect());
                    let y = f.infer(&[&ins[0], &ins[1], &ins[2]]).unwrap();
                    y.data().iter().zip(r.data()).map(|(a, b)| (*a * *b) as f64).sum()
                });
                let analytic: Vec<f64> = grads[k].data().iter().map(|&v| v as f64).collect();
                assert!(max_relative_error(&analytic, &numeric, 1e-2) < 2e-3, "{method:?} input {k}");
            }
        }
    }

    #[test]
    fn pairwise_contracts_over_all_tap_widths() {
        for da in 1..=84 {
            let a = ramp(&[1, da, 1, 1], 3);
            let ones = Tensor::full(&[1, da, 1, 1], 1.0);
            let f = Fusion::new(FusionMethod::Multiplication, &[da, da], 0).unwrap();
            assert_eq!(f.infer(&[&a, &ones]).unwrap(), a);
            for db in 1..=84 {
                let cat = Fusion::new(FusionMethod::Concatenation, &[da, db], 0).unwrap();
                assert_eq!(cat.out_dim(), da + db);
                let conv = Fusion::new(FusionMethod::Convolution, &[da, db], 0);
                if (da + db) % 2 == 0 {
                    assert_eq!(conv.unwrap().out_dim(), (da + db) / 2);
                } else {
                    assert!(conv.is_err());
                }
                assert_eq!(Fusion::new(FusionMethod::Multiplication, &[da, db], 0).is_ok(), da == db);
            }
        }
        let b = ramp(&[1, 84, 1, 1], 7);
        let conv = Fusion::new(FusionMethod::Convolution, &[84, 84], 0).unwrap();
        assert_eq!(conv.infer(&[&ramp(&[1, 84, 1, 1], 3), &b]).unwrap().shape(), &[1, 84, 1, 1]);
    }

    #[test]
    fn mul_is_commutative_and_concat_keeps_channels() {
        let a = ramp(&[2, 6, 1, 1], 3);
        let b = ramp(&[2, 6, 1, 1], 5);
        let mul = Fusion::new(FusionMethod::Multiplication, &[6, 6], 0).unwrap();
        assert_eq!(mul.infer(&[&a, &b]).unwrap(), mul.infer(&[&b, &a]).unwrap());
        let cat = Fusion::new(FusionMethod::Concatenation, &[6, 6], 0).unwrap();
        let ab = cat.infer(&[&a, &b]).unwrap();
        let ba = cat.infer(&[&b, &a]).unwrap();
        assert_ne!(ab, ba);
        let mut x = ab.into_vec();
        let mut y = ba.into_vec();
        x.sort_by(f32::total_cmp);
        y.sort_by(f32::total_cmp);
        assert_eq!(x, y);
    }

    #[test]
    fn learning_rate_schedule() {
        let h = PoseHyper::default();
        assert_eq!(h.lr_at(0), 0.1);
        assert_eq!(h.lr_at(14), 0.1);
        assert_eq!(h.lr_at(15), 0.05);
        assert_eq!(h.lr_at(31), 0.025);
    }

    #[test]
    fn mul_fusion_with_ones_branch_passes_product() {
        let a = ramp(&[2, 84, 1, 1], 5);
        let b = ramp(&[2, 84, 1, 1], 9);
        let ones = Tensor::full(&[2, 84, 1, 1], 1.0);
        let f = Fusion::new(FusionMethod::Multiplication, &[84, 84, 84], 0).unwrap();
        assert_eq!(f.infer(&[&a, &b, &ones]).unwrap(), a.mul_elem(&b));
    }

    #[test]
    fn trident_output_shape_and_tap_mismatch() {
        let cfg = TridentConfig::default();
        let t = new_trident(&cfg, 1).unwrap();
        let inputs = [ramp(&[2, 1, 64, 64], 3), ramp(&[2, 1, 64, 64], 5), ramp(&[2, 2, 64, 64], 7)];
        let y = t.infer(&inputs).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        let odd = BranchConfig { head_fc: vec![128, 80, 3], ..BranchConfig::default() };
        let r = build_trident(
            build_branch(&cfg.branch, 0).unwrap(),
            build_branch(&cfg.branch, 1).unwrap(),
            build_branch(&odd.with_channels(2), 2).unwrap(),
            FusionMethod::Concatenation,
            0,
        );
        assert!(matches!(r, Err(PoseError::ShapeMismatch(_))));
    }

    #[test]
    fn output_layer_gradient_matches_finite_differences() {
        let cfg = TridentConfig { dropout: 0.0, fusion: FusionMethod::Convolution, ..TridentConfig::default() };
        let mut t = new_trident(&cfg, 2).unwrap();
        let inputs = [ramp(&[2, 1, 64, 64], 3), ramp(&[2, 1, 64, 64], 5), ramp(&[2, 2, 64, 64], 7)];
        let taps = t.taps(&inputs);
        let target = [0.1f32, -0.2, 0.3, 0.05, 0.2, -0.4];
        let w = LossWeights::default();
        t.head.zero_grad();
        let y = t.head_forward(&taps, Mode::Train).unwrap();
        let (_, g) = weighted_l2_loss(y.data(), &target, &w);
        t.head_backward(&Tensor::from_vec(&[2, 3], g.iter().map(|&v| v as f32).collect()));
        let last = t.head.len() - 2;
        let (_, fc) = t.head.layers().nth(last).unwrap();
        let analytic: Vec<f64> = fc.params()[0].grad.data().iter().map(|&v| v as f64).collect();
        let w0: Vec<f64> = fc.params()[0].value.data().iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = fc.params()[1].value.data().iter().map(|&v| v as f64).collect();
        let fused = t.fusion.infer(&[&taps[0], &taps[1], &taps[2]]).unwrap();
        let mut h = fused;
        for (_, layer) in t.head.layers().take(last) {
            h = layer.infer(&h);
        }
        let h: Vec<f64> = h.data().iter().map(|&v| v as f64).collect();
        let n_in = h.len() / 2;
        // f64 re-evaluation of tanh(W h + b) under the weighted loss
        let numeric = numeric_gradient(&w0, 1e-6, |wv| {
            let ws = w.to_array();
            (0..6)
                .map(|k| {
                    let (n, o) = (k / 3, k % 3);
                    let y = ((0..n_in).map(|i| wv[o * n_in + i] * h[n * n_in + i]).sum::<f64>() + b[o]).tanh();
                    (ws[o] * (y - target[k] as f64)).abs()
                })
                .sum::<f64>()
                / 2.0
        });
        assert!(max_relative_error(&analytic, &numeric, 1e-3) < 1e-3);
    }

    fn tiny_samples(n: usize) -> Vec<PoseSample> {
        (0..n)
            .map(|k| {
                let depth = Image::from_fn(64, 64, |x, y| (((x + 3 * k) as f32) * 0.2).sin() * ((y as f32) * 0.1).cos());
                PoseSample {
                    id: format!("s{k}"),
                    ffd: depth.map(|v| -v),
                    motion: MotionImage { dx: depth.clone(), dy: depth.map(|v| v * 0.5) },
                    depth,
                    pose: Some(PoseAngles::new(k as f64 * 5.0, -(k as f64) * 3.0, k as f64 * 7.0 - 10.0)),
                }
            })
            .collect()
    }

    #[test]
    fn phase_two_leaves_branches_bit_identical() {
        let cfg = TridentConfig::default();
        let mut t = new_trident(&cfg, 3).unwrap();
        let samples = tiny_samples(4);
        let refs: Vec<&PoseSample> = samples.iter().collect();
        let hyper = PoseHyper { phase1_epochs: 2, phase2_epochs: 3, batch_size: 2, ..Default::default() };
        let before = t.branch_fingerprint();
        let report = train_two_phase(&mut t, &refs, &hyper).unwrap();
        assert!(report.freeze_verified);
        assert_ne!(before, t.branch_fingerprint(), "phase 1 should have moved the branches");
        assert_eq!(report.phase2.len(), 3);
        assert_eq!(report.phase2[2].lr, 0.1);
    }

    #[test]
    fn missing_pose_is_reported() {
        let mut samples = tiny_samples(2);
        samples[1].pose = None;
        let refs: Vec<&PoseSample> = samples.iter().collect();
        let mut t = new_trident(&TridentConfig::default(), 0).unwrap();
        let r = train_two_phase(&mut t, &refs, &PoseHyper { phase1_epochs: 1, phase2_epochs: 1, ..Default::default() });
        assert!(matches!(r, Err(PoseError::MissingAnnotation(id)) if id == "s1"));
    }

    #[test]
    fn checkpoints_round_trip() {
        let t = new_trident(&TridentConfig::default(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        t.save(&dir.path().join("t.ckpt")).unwrap();
        let u = Trident::load(&dir.path().join("t.ckpt")).unwrap();
        let inputs = [ramp(&[1, 1, 64, 64], 3), ramp(&[1, 1, 64, 64], 5), ramp(&[1, 2, 64, 64], 7)];
        assert_eq!(t.infer(&inputs).unwrap(), u.infer(&inputs).unwrap());
        let s = build_shoulder_net(&BranchConfig::default(), 5).unwrap();
        save_branch(&s, SHOULDER_KIND, &dir.path().join("s.ckpt")).unwrap();
        let s2 = load_branch(SHOULDER_KIND, &dir.path().join("s.ckpt")).unwrap();
        let crop = Image::from_fn(64, 64, |x, y| (x as f32 - y as f32) / 64.0);
        assert_eq!(predict_shoulder_pose(&s, &crop), predict_shoulder_pose(&s2, &crop));
        assert!(load_branch(TRIDENT_KIND, &dir.path().join("s.ckpt")).is_err());
    }
}
