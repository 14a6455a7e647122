//! Head-centre regression from a full depth frame.

use std::path::Path;

use headpose_nn::layers::{Conv2d, Dropout, Linear, MaxPool2d, Tanh};
use headpose_nn::{Checkpoint, CheckpointError, Mode, Optimizer, Sequential, Sgd, StepDecay, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::common::{epoch_batches, images_to_tensor, mse, optimizer_step, ConfigError};
use crate::dataio::{preprocess, FrameRecord};
use crate::image::Image;

pub const CHECKPOINT_KIND: &str = "localizer";
const POOLED_STAGES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub filters: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizerConfig {
    /// (width, height) of the network input.
    pub input_size: (usize, usize),
    pub conv_specs: Vec<ConvSpec>,
    pub fc_sizes: Vec<usize>,
    pub dropout: f32,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        let spec = |kernel, filters| ConvSpec { kernel, filters, stride: 1 };
        Self {
            input_size: (160, 132),
            conv_specs: vec![spec(5, 16), spec(5, 24), spec(4, 32), spec(3, 48), spec(3, 64)],
            fc_sizes: vec![256, 64, 2],
            dropout: 0.5,
        }
    }
}

impl LocalizerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.conv_specs.len() < POOLED_STAGES {
            return Err(ConfigError(format!("localizer needs at least {POOLED_STAGES} conv stages")));
        }
        if self.fc_sizes.last() != Some(&2) {
            return Err(ConfigError("localizer output dimension must be 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.conv_specs.iter().any(|s| s.kernel == 0 || s.filters == 0 || s.stride == 0) {
            return Err(ConfigError("conv specs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LocalizerError {
    #[error("record {0} has no head centre annotation")]
    MissingAnnotation(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub struct Localizer {
    pub config: LocalizerConfig,
    pub net: Sequential,
}

pub fn build_localizer(config: &LocalizerConfig, seed: u64) -> Result<Localizer, ConfigError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Sequential::new();
    let mut channels = 1;
    for (i, s) in config.conv_specs.iter().enumerate() {
        let n = i + 1;
        let conv = Conv2d::new(&mut rng, channels, s.filters, s.kernel, s.stride, 0);
        let conv = if i == 0 { conv.without_input_grad() } else { conv };
        net.push(format!("conv{n}"), conv);
        net.push(format!("tanh{n}"), Tanh::new());
        if i < POOLED_STAGES {
            net.push(format!("pool{n}"), MaxPool2d::new(2));
        }
        channels = s.filters;
    }
    let (w, h) = config.input_size;
    let conv_out = net.output_shape(&[1, 1, h, w]).map_err(ConfigError)?;
    let mut features: usize = conv_out[1..].iter().product();
    for (i, &size) in config.fc_sizes.iter().enumerate() {
        let n = i + 1;
        net.push(format!("fc{n}"), Linear::new(&mut rng, features, size));
        net.push(format!("fc{n}_tanh"), Tanh::new());
        if i + 1 < config.fc_sizes.len() && config.dropout > 0.0 {
            net.push(format!("drop{n}"), Dropout::new(config.dropout, seed.wrapping_add(n as u64)));
        }
        features = size;
    }
    Ok(Localizer { config: config.clone(), net })
}

pub fn decode_center(raw: (f64, f64), frame_size: (usize, usize)) -> (f64, f64) {
    ((raw.0 + 1.0) / 2.0 * frame_size.0 as f64, (raw.1 + 1.0) / 2.0 * frame_size.1 as f64)
}

pub fn encode_center(center: (f64, f64), frame_size: (usize, usize)) -> (f64, f64) {
    (2.0 * center.0 / frame_size.0 as f64 - 1.0, 2.0 * center.1 / frame_size.1 as f64 - 1.0)
}

/// Resized, normalised full-frame depth as fed to the localizer.
pub fn localizer_input(record: &FrameRecord, config: &LocalizerConfig) -> Image {
    let (w, h) = config.input_size;
    preprocess(&record.depth.image().resize(w, h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizerHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    /// Halve the learning rate every this many epochs (0 keeps it fixed).
    pub halve_every: usize,
    pub seed: u64,
}

impl Default for LocalizerHyper {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 8, learning_rate: 0.01, momentum: 0.9, halve_every: 40, seed: 0 }
    }
}

fn targets(records: &[&FrameRecord]) -> Result<Vec<(f64, f64)>, LocalizerError> {
    records
        .iter()
        .map(|r| {
            let c = r.head_center_2d.ok_or_else(|| LocalizerError::MissingAnnotation(r.id()))?;
            Ok(encode_center(c, (r.depth.width(), r.depth.height())))
        })
        .collect()
}

impl Localizer {
    /// Raw `(n, 2)` outputs for preprocessed inputs.
    pub fn infer_raw(&self, inputs: &Tensor) -> Tensor {
        self.net.infer(inputs)
    }

    pub fn predict_center(&self, record: &FrameRecord) -> (f64, f64) {
        let x = images_to_tensor(&[&localizer_input(record, &self.config)]);
        let y = self.infer_raw(&x);
        decode_center((y.data()[0] as f64, y.data()[1] as f64), (record.depth.width(), record.depth.height()))
    }

    /// Mean Euclidean error (pixels) against annotated centres.
    pub fn mean_error(&self, records: &[&FrameRecord]) -> Result<f64, LocalizerError> {
        let mut total = 0.0;
        for r in records {
            let gt = r.head_center_2d.ok_or_else(|| LocalizerError::MissingAnnotation(r.id()))?;
            let p = self.predict_center(r);
            total += ((p.0 - gt.0).powi(2) + (p.1 - gt.1).powi(2)).sqrt();
        }
        Ok(total / records.len().max(1) as f64)
    }

    pub fn save(&self, path: &Path) -> Result<(), LocalizerError> {
        let config = serde_json::to_value(&self.config).expect("config serialises");
        Checkpoint::new(CHECKPOINT_KIND, config).with_tensors("", self.net.named_state()).save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LocalizerError> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(CHECKPOINT_KIND)?;
        let config: LocalizerConfig =
            serde_json::from_value(ck.config.clone()).map_err(|e| ConfigError(format!("localizer config: {e}")))?;
        let mut model = build_localizer(&config, 0)?;
        ck.restore("", model.net.named_state_mut())?;
        Ok(model)
    }
}

/// SGD on the mean squared error between raw outputs and encoded centres.
/// Returns the per-epoch mean training loss.
pub fn train_localizer(
    model: &mut Localizer,
    records: &[&FrameRecord],
    hyper: &LocalizerHyper,
) -> Result<Vec<f64>, LocalizerError> {
    let targets = targets(records)?;
    let inputs: Vec<Image> = records.iter().map(|r| localizer_input(r, &model.config)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut opt = Sgd::new(hyper.learning_rate, hyper.momentum);
    let mut history = Vec::with_capacity(hyper.epochs);
    let schedule = StepDecay { initial: hyper.learning_rate, factor: 0.5, every: hyper.halve_every };
    for epoch in 0..hyper.epochs {
        if hyper.halve_every > 0 {
            opt.set_learning_rate(schedule.lr_at(epoch));
        }
        let mut sum = 0.0;
        let mut count = 0;
        for batch in epoch_batches(records.len(), hyper.batch_size, &mut rng) {
            let x = images_to_tensor(&batch.iter().map(|&i| &inputs[i]).collect::<Vec<_>>());
            let t: Vec<f32> = batch.iter().flat_map(|&i| [targets[i].0 as f32, targets[i].1 as f32]).collect();
            let t = Tensor::from_vec(&[batch.len(), 2], t);
            model.net.zero_grad();
            let y = model.net.forward(&x, Mode::Train);
            let (loss, grad) = mse(&y, &t);
            model.net.backward(&grad);
            optimizer_step(&mut model.net, &mut opt);
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        history.push(sum / count.max(1) as f64);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use headpose_nn::gradcheck::{max_relative_error, numeric_gradient};

    #[test]
    fn decode_examples() {
        assert_eq!(decode_center((0.0, 0.0), (160, 132)), (80.0, 66.0));
        assert_eq!(decode_center((-1.0, -1.0), (160, 132)), (0.0, 0.0));
        assert_eq!(decode_center((0.5, 0.0), (160, 132)), (120.0, 66.0));
    }

    #[test]
    fn encode_inverts_decode() {
        for x in 0..=160 {
            for y in (0..=132).step_by(7) {
                let p = (x as f64, y as f64);
                let q = decode_center(encode_center(p, (160, 132)), (160, 132));
                assert!((p.0 - q.0).abs() < 0.5 && (p.1 - q.1).abs() < 0.5);
            }
        }
    }

    #[test]
    fn output_shape_and_range() {
        let model = build_localizer(&LocalizerConfig::default(), 1).unwrap();
        assert_eq!(model.net.output_shape(&[8, 1, 132, 160]).unwrap(), vec![8, 2]);
        assert!(model.net.param_count() < 5_000_000);
        let y = model.infer_raw(&Tensor::zeros(&[1, 1, 132, 160]));
        assert!(y.data().iter().all(|v| v.is_finite() && v.abs() < 1.0));
    }

    #[test]
    fn inconsistent_configs_rejected() {
        let mut c = LocalizerConfig::default();
        c.fc_sizes = vec![64, 3];
        assert!(build_localizer(&c, 0).is_err());
        let mut c = LocalizerConfig::default();
        c.conv_specs.truncate(3);
        assert!(build_localizer(&c, 0).is_err());
        let mut c = LocalizerConfig::default();
        c.input_size = (40, 40);
        assert!(build_localizer(&c, 0).is_err());
    }

    #[test]
    fn final_layer_gradient_matches_finite_differences() {
        let mut config = LocalizerConfig::default();
        config.dropout = 0.0;
        let mut model = build_localizer(&config, 3).unwrap();
        let x = Tensor::from_vec(&[2, 1, 132, 160], (0..2 * 132 * 160).map(|i| (i % 97) as f32 / 48.0 - 1.0).collect());
        let t = Tensor::from_vec(&[2, 2], vec![0.3, -0.2, -0.5, 0.1]);
        let last_fc = model.net.len() - 2;
        model.net.zero_grad();
        let y = model.net.forward(&x, Mode::Train);
        model.net.backward(&mse(&y, &t).1);
        let (_, fc) = model.net.layers().nth(last_fc).unwrap();
        let analytic: Vec<f64> = fc.params()[0].grad.data().iter().map(|&v| v as f64).collect();
        let w0: Vec<f64> = fc.params()[0].value.data().iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = fc.params()[1].value.data().iter().map(|&v| v as f64).collect();
        let mut h = x.clone();
        for (_, layer) in model.net.layers().take(last_fc) {
            h = layer.infer(&h);
        }
        let h: Vec<f64> = h.data().iter().map(|&v| v as f64).collect();
        let (n_in, n_out) = (h.len() / 2, b.len());
        // f64 re-evaluation of tanh(W h + b) and the squared error
        let numeric = numeric_gradient(&w0, 1e-6, |w| {
            let mut loss = 0.0;
            for n in 0..2 {
                for o in 0..n_out {
                    let z: f64 = (0..n_in).map(|i| w[o * n_in + i] * h[n * n_in + i]).sum::<f64>() + b[o];
                    loss += (z.tanh() - t.data()[n * n_out + o] as f64).powi(2);
                }
            }
            loss / (2 * n_out) as f64
        });
        assert!(max_relative_error(&analytic, &numeric, 1e-4) < 1e-3);
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let records = crate::dataio::synth::generate(&Default::default(), 1, 4, 5);
        let refs: Vec<&FrameRecord> = records.iter().collect();
        let mut config = LocalizerConfig::default();
        config.dropout = 0.0;
        let mut model = build_localizer(&config, 0).unwrap();
        let hyper = LocalizerHyper { epochs: 3, batch_size: 4, learning_rate: 0.0, ..Default::default() };
        let h = train_localizer(&mut model, &refs, &hyper).unwrap();
        assert!(h.iter().all(|v| (v - h[0]).abs() < 1e-9));
    }

    #[test]
    fn missing_centre_is_reported() {
        let mut records = crate::dataio::synth::generate(&Default::default(), 1, 1, 5);
        records[0].head_center_2d = None;
        let refs: Vec<&FrameRecord> = records.iter().collect();
        let mut model = build_localizer(&LocalizerConfig::default(), 0).unwrap();
        let r = train_localizer(&mut model, &refs, &LocalizerHyper::default());
        assert!(matches!(r, Err(LocalizerError::MissingAnnotation(_))));
    }
}
