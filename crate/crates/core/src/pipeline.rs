//! End-to-end inference: localize, crop, FfD and motion, trident, and the
//! shoulder path. Also the input preparation shared with training.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crops::{head_crops, shoulder_crop, HeadCrops, CROP_SIZE};
use crate::dataio::{DataError, FrameRecord};
use crate::ffd::{ffd_infer, ffd_infer_batch, Ffd, FfdError, Generator};
use crate::geometry::{CropBox, GeometryError, PoseAngles, HEAD_EXTENT_MM, SHOULDER_EXTENT_MM};
use crate::image::Image;
use crate::localizer::{Localizer, LocalizerError};
use crate::metrics::{
    mean_recon, pose_report, pose_rows, recon_metrics, recon_rows, to_metric_units, MetricsError, PoseReport,
    ReconMetrics, ReportRow,
};
use crate::motion::{motion_image, MotionImage};
use crate::posenet::{load_branch, predict_pose, predict_shoulder_pose, Branch, PoseError, PoseSample, Trident, SHOULDER_KIND};
use crate::ConfigError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("model: {0}")]
    Model(String),
}

impl From<PoseError> for EvalError {
    fn from(e: PoseError) -> Self {
        match e {
            PoseError::Config(c) => EvalError::Config(c),
            other => EvalError::Model(other.to_string()),
        }
    }
}

impl From<FfdError> for EvalError {
    fn from(e: FfdError) -> Self {
        match e {
            FfdError::Config(c) => EvalError::Config(c),
            other => EvalError::Model(other.to_string()),
        }
    }
}

impl From<LocalizerError> for EvalError {
    fn from(e: LocalizerError) -> Self {
        match e {
            LocalizerError::Config(c) => EvalError::Config(c),
            other => EvalError::Model(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub localizer: Option<PathBuf>,
    pub ffd: Option<PathBuf>,
    pub trident: Option<PathBuf>,
    pub shoulder: Option<PathBuf>,
    pub head_extent_mm: (f64, f64),
    pub shoulder_extent_mm: (f64, f64),
    pub use_gt_center: bool,
    /// Feed zeros to the FfD branch instead of generator output.
    pub disable_ffd: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            localizer: None,
            ffd: None,
            trident: None,
            shoulder: None,
            head_extent_mm: HEAD_EXTENT_MM,
            shoulder_extent_mm: SHOULDER_EXTENT_MM,
            use_gt_center: false,
            disable_ffd: false,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    /// Checks extents and that every checkpoint needed for inference exists.
    pub fn validate_for_inference(&self) -> Result<(), ConfigError> {
        for (a, b) in [self.head_extent_mm, self.shoulder_extent_mm] {
            if !(a > 0.0 && b > 0.0) {
                return Err(ConfigError("crop extents must be positive".into()));
            }
        }
        let mut required = vec![("ffd", &self.ffd), ("trident", &self.trident)];
        if !self.use_gt_center {
            required.push(("localizer", &self.localizer));
        }
        for (name, path) in required {
            match path {
                None => return Err(ConfigError(format!("no {name} checkpoint configured"))),
                Some(p) if !p.is_file() => return Err(ConfigError(format!("{name} checkpoint {} not found", p.display()))),
                _ => {}
            }
        }
        if let Some(p) = &self.shoulder {
            if !p.is_file() {
                return Err(ConfigError(format!("shoulder checkpoint {} not found", p.display())));
            }
        }
        Ok(())
    }
}

pub struct Models {
    pub localizer: Option<Localizer>,
    pub generator: Generator,
    pub trident: Trident,
    pub shoulder: Option<Branch>,
}

impl Models {
    pub fn load(config: &PipelineConfig) -> Result<Self, EvalError> {
        config.validate_for_inference()?;
        let localizer = match (&config.localizer, config.use_gt_center) {
            (Some(p), false) => Some(Localizer::load(p)?),
            _ => None,
        };
        let generator = Ffd::load(config.ffd.as_ref().expect("validated"))?.generator;
        let trident = Trident::load(config.trident.as_ref().expect("validated"))?;
        let shoulder = config.shoulder.as_ref().map(|p| load_branch(SHOULDER_KIND, p)).transpose()?;
        Ok(Self { localizer, generator, trident, shoulder })
    }
}

/// Sorts records by subject, sequence and frame index.
pub fn order_frames(records: &mut [&FrameRecord]) {
    records.sort_by(|a, b| (&a.subject_id, &a.sequence_id, a.frame_index).cmp(&(&b.subject_id, &b.sequence_id, b.frame_index)));
}

/// Head crops and motion images for an ordered run of frames.
///
/// Motion is computed from the previous frame's depth crop when that frame
/// belongs to the same sequence and was not skipped; otherwise it is zero.
pub fn head_inputs(
    records: &[&FrameRecord],
    centers: &[(f64, f64)],
    extent_mm: (f64, f64),
) -> Vec<Result<(HeadCrops, MotionImage), GeometryError>> {
    assert_eq!(records.len(), centers.len());
    let mut out: Vec<Result<(HeadCrops, MotionImage), GeometryError>> = Vec::with_capacity(records.len());
    for (i, (r, &c)) in records.iter().zip(centers).enumerate() {
        let item = head_crops(r, c, extent_mm).map(|crops| {
            let prev = match (i.checked_sub(1), out.last()) {
                (Some(j), Some(Ok((p, _)))) if records[j].same_sequence(r) => Some(&p.depth),
                _ => None,
            };
            let motion = match prev {
                Some(p) => motion_image(p, &crops.depth).expect("crops share one size"),
                None => MotionImage::zeros(CROP_SIZE, CROP_SIZE),
            };
            (crops, motion)
        });
        out.push(item);
    }
    out
}

/// Depth crop and gray target pairs for FfD training, at annotated centres.
pub fn ffd_pairs(records: &[&FrameRecord], extent_mm: (f64, f64)) -> Result<Vec<(Image, Image)>, DataError> {
    records
        .iter()
        .map(|r| {
            let c = r.head_center_2d.ok_or_else(|| DataError::Missing(format!("{}: head centre", r.id())))?;
            let crops = head_crops(r, c, extent_mm).map_err(|e| DataError::Invalid(format!("{}: {e}", r.id())))?;
            let gray = crops.gray.ok_or_else(|| DataError::Missing(format!("{}: gray frame", r.id())))?;
            Ok((crops.depth, gray))
        })
        .collect()
}

/// Trident training samples at annotated centres. Records are reordered by
/// sequence so motion images see true predecessors.
pub fn pose_samples(
    records: &[&FrameRecord],
    generator: &Generator,
    extent_mm: (f64, f64),
) -> Result<Vec<PoseSample>, DataError> {
    let mut ordered = records.to_vec();
    order_frames(&mut ordered);
    let centers = ordered
        .iter()
        .map(|r| r.head_center_2d.ok_or_else(|| DataError::Missing(format!("{}: head centre", r.id()))))
        .collect::<Result<Vec<_>, _>>()?;
    let inputs = head_inputs(&ordered, &centers, extent_mm);
    let mut samples = Vec::with_capacity(ordered.len());
    let mut pending = Vec::new();
    for (r, item) in ordered.iter().zip(inputs) {
        let (crops, motion) = item.map_err(|e| DataError::Invalid(format!("{}: {e}", r.id())))?;
        pending.push(crops.depth.clone());
        samples.push(PoseSample { id: r.id(), depth: crops.depth, ffd: Image::new(0, 0), motion, pose: r.head_pose });
    }
    for (chunk, out) in pending.chunks(16).zip(samples.chunks_mut(16)) {
        let ffd = ffd_infer_batch(generator, &chunk.iter().collect::<Vec<_>>());
        for (s, f) in out.iter_mut().zip(ffd) {
            s.ffd = f;
        }
    }
    Ok(samples)
}

/// Shoulder crops at annotated head centres with their labels.
pub fn shoulder_samples(
    records: &[&FrameRecord],
    head_extent_mm: (f64, f64),
    shoulder_extent_mm: (f64, f64),
) -> Result<Vec<(String, Image, Option<PoseAngles>)>, DataError> {
    records
        .iter()
        .map(|r| {
            let c = r.head_center_2d.ok_or_else(|| DataError::Missing(format!("{}: head centre", r.id())))?;
            let invalid = |e: GeometryError| DataError::Invalid(format!("{}: {e}", r.id()));
            let head = crate::geometry::head_crop_box(c, &r.intrinsics, &r.depth, head_extent_mm).map_err(invalid)?;
            let (_, crop) = shoulder_crop(r, &head, shoulder_extent_mm).map_err(invalid)?;
            Ok((r.id(), crop, r.shoulder_pose))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTiming {
    pub localize_ms: f64,
    pub crop_ms: f64,
    pub ffd_ms: f64,
    pub trident_ms: f64,
    pub shoulder_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub id: String,
    pub center: Option<(f64, f64)>,
    pub head_box: Option<CropBox>,
    pub head_pose: Option<PoseAngles>,
    pub shoulder_pose: Option<PoseAngles>,
    /// Reason the frame was skipped, if it was.
    pub skipped: Option<String>,
    /// FfD output against the gray crop, when the frame has gray data.
    pub recon: Option<ReconMetrics>,
    pub motion_is_zero: bool,
    pub timing: StageTiming,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Per-frame inference over frames in sequence order. Frames whose crop
/// cannot be formed are returned with a skip reason.
pub fn run_pipeline(records: &[&FrameRecord], models: &Models, config: &PipelineConfig) -> Result<Vec<FrameResult>, EvalError> {
    let mut timings = vec![StageTiming::default(); records.len()];
    let centers = records
        .iter()
        .zip(&mut timings)
        .map(|(r, timing)| {
            let t = Instant::now();
            let c = match (&models.localizer, config.use_gt_center) {
                (Some(loc), false) => loc.predict_center(r),
                (None, false) => return Err(ConfigError("a localizer is required without ground-truth centres".into())),
                (_, true) => r.head_center_2d.ok_or_else(|| ConfigError(format!("{} has no head centre", r.id())))?,
            };
            timing.localize_ms = ms(t);
            Ok(c)
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let t = Instant::now();
    let inputs = head_inputs(records, &centers, config.head_extent_mm);
    let crop_ms = ms(t) / records.len().max(1) as f64;

    let mut results = Vec::with_capacity(records.len());
    for (((r, &center), item), mut timing) in records.iter().zip(&centers).zip(inputs).zip(timings) {
        timing.crop_ms = crop_ms;
        let mut result = FrameResult {
            id: r.id(),
            center: Some(center),
            head_box: None,
            head_pose: None,
            shoulder_pose: None,
            skipped: None,
            recon: None,
            motion_is_zero: true,
            timing,
        };
        let (crops, motion) = match item {
            Ok(v) => v,
            Err(e) => {
                result.skipped = Some(e.to_string());
                results.push(result);
                continue;
            }
        };
        let t = Instant::now();
        let ffd = if config.disable_ffd {
            Image::new(CROP_SIZE, CROP_SIZE)
        } else {
            ffd_infer(&models.generator, &crops.depth)
        };
        result.timing.ffd_ms = ms(t);
        if let Some(gray) = &crops.gray {
            result.recon = recon_metrics(&to_metric_units(&ffd), &to_metric_units(gray)).ok();
        }
        let t = Instant::now();
        result.head_pose = Some(predict_pose(&models.trident, &crops.depth, &ffd, &motion)?);
        result.timing.trident_ms = ms(t);
        if let Some(net) = &models.shoulder {
            let t = Instant::now();
            if let Ok((_, crop)) = shoulder_crop(r, &crops.bbox, config.shoulder_extent_mm) {
                result.shoulder_pose = Some(predict_shoulder_pose(net, &crop));
            }
            result.timing.shoulder_ms = ms(t);
        }
        result.motion_is_zero = motion.is_zero();
        result.head_box = Some(crops.bbox);
        results.push(result);
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub split: String,
    pub head: PoseReport,
    pub shoulder: Option<PoseReport>,
    pub recon: Option<ReconMetrics>,
    /// Mean and standard deviation of the head-centre error in pixels.
    pub localization: Option<(f64, f64)>,
    pub skipped: usize,
}

impl EvalReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        let (d, s) = (self.dataset.as_str(), self.split.as_str());
        let mut rows = pose_rows(d, s, "trident", &self.head);
        if let Some(r) = &self.shoulder {
            rows.extend(pose_rows(d, s, "shoulder", r));
        }
        if let Some(m) = &self.recon {
            rows.extend(recon_rows(d, s, "ffd", m));
        }
        let row = |metric: &str, value: f64| ReportRow {
            dataset: d.into(),
            split: s.into(),
            model: "pipeline".into(),
            metric: metric.into(),
            value,
        };
        if let Some((mean, std)) = self.localization {
            rows.push(row("localization_err_mean", mean));
            rows.push(row("localization_err_std", std));
        }
        rows.push(row("skipped_frames", self.skipped as f64));
        rows
    }
}

/// Runs the pipeline over the given test frames and aggregates the results.
pub fn evaluate(
    records: &[&FrameRecord],
    models: &Models,
    config: &PipelineConfig,
    dataset: &str,
    split: &str,
) -> Result<EvalReport, EvalError> {
    let mut ordered = records.to_vec();
    order_frames(&mut ordered);
    let results = run_pipeline(&ordered, models, config)?;
    let mut head = (Vec::new(), Vec::new());
    let mut shoulder = (Vec::new(), Vec::new());
    let mut recon = Vec::new();
    let mut loc = Vec::new();
    for (r, res) in ordered.iter().zip(&results) {
        if let (Some(p), Some(g)) = (res.head_pose, r.head_pose) {
            head.0.push(p);
            head.1.push(g);
        }
        if let (Some(p), Some(g)) = (res.shoulder_pose, r.shoulder_pose) {
            shoulder.0.push(p);
            shoulder.1.push(g);
        }
        recon.extend(res.recon);
        if let (Some(c), Some(g)) = (res.center, r.head_center_2d) {
            loc.push(((c.0 - g.0).powi(2) + (c.1 - g.1).powi(2)).sqrt());
        }
    }
    let localization = (!loc.is_empty()).then(|| {
        let n = loc.len() as f64;
        let mean = loc.iter().sum::<f64>() / n;
        (mean, (loc.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt())
    });
    Ok(EvalReport {
        dataset: dataset.into(),
        split: split.into(),
        head: pose_report(&head.0, &head.1)?,
        shoulder: if shoulder.0.is_empty() { None } else { Some(pose_report(&shoulder.0, &shoulder.1)?) },
        recon: mean_recon(&recon),
        localization,
        skipped: results.iter().filter(|r| r.skipped.is_some()).count(),
    })
}

/// Side-by-side panels (gray, FfD, depth, motion x, motion y) scaled to
/// `[0, 1]`, for visual inspection.
pub fn contact_sheet(panels: &[&Image]) -> Image {
    let h = panels.iter().map(|p| p.height()).max().unwrap_or(0);
    let w: usize = panels.iter().map(|p| p.width()).sum();
    let mut sheet = Image::new(w, h);
    let mut x0 = 0;
    for p in panels {
        let (lo, hi) = p.data().iter().fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        for y in 0..p.height() {
            for x in 0..p.width() {
                sheet.set(x0 + x, y, (p.get(x, y) - lo) / span);
            }
        }
        x0 += p.width();
    }
    sheet
}
