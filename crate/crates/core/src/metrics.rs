//! Reconstruction metrics, pose error statistics and report files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PoseAngles;
use crate::image::Image;

/// Angle error below which a per-angle estimate counts as good, degrees.
pub const ACCURACY_THRESHOLD_DEG: f64 = 15.0;

pub const THRESHOLDS: [f64; 3] = [1.25, 2.5, 3.75];

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("images differ in size: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("no pixel has a positive ground truth value")]
    AllMasked,
    #[error("{0} predictions for {1} ground truth entries")]
    LengthMismatch(usize, usize),
    #[error("report i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReconMetrics {
    pub l1_norm: f64,
    pub l2_norm: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse_linear: f64,
    pub rmse_log: f64,
    pub rmse_scale_inv: f64,
    pub thresh_1_25: f64,
    pub thresh_2_5: f64,
    pub thresh_3_75: f64,
}

impl ReconMetrics {
    pub fn fields(&self) -> [(&'static str, f64); 10] {
        [
            ("l1_norm", self.l1_norm),
            ("l2_norm", self.l2_norm),
            ("abs_rel", self.abs_rel),
            ("sq_rel", self.sq_rel),
            ("rmse_linear", self.rmse_linear),
            ("rmse_log", self.rmse_log),
            ("rmse_scale_inv", self.rmse_scale_inv),
            ("thresh_1_25", self.thresh_1_25),
            ("thresh_2_5", self.thresh_2_5),
            ("thresh_3_75", self.thresh_3_75),
        ]
    }
}

/// Metrics of `pred` against `gt`, both in positive intensity units.
///
/// Norms and linear RMSE use every pixel. Relative errors and thresholds
/// use pixels with `gt > 0`; a non-positive prediction there fails every
/// threshold. Log errors use pixels where both values are positive.
pub fn recon_metrics(pred: &Image, gt: &Image) -> Result<ReconMetrics, MetricsError> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(MetricsError::ShapeMismatch((pred.width(), pred.height()), (gt.width(), gt.height())));
    }
    let mut l1 = 0.0;
    let mut sq = 0.0;
    let mut rel = [0.0f64; 2];
    let mut hits = [0usize; 3];
    let mut n_rel = 0usize;
    let mut logs = Vec::new();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p as f64, g as f64);
        let d = p - g;
        l1 += d.abs();
        sq += d * d;
        if g > 0.0 {
            n_rel += 1;
            rel[0] += d.abs() / g;
            rel[1] += d * d / g;
            if p > 0.0 {
                let ratio = (p / g).max(g / p);
                for (h, &t) in hits.iter_mut().zip(&THRESHOLDS) {
                    *h += (ratio < t) as usize;
                }
                logs.push(p.ln() - g.ln());
            }
        }
    }
    if n_rel == 0 {
        return Err(MetricsError::AllMasked);
    }
    let n = pred.data().len() as f64;
    let nr = n_rel as f64;
    let (rmse_log, rmse_scale_inv) = if logs.is_empty() {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let m = logs.len() as f64;
        let mean_sq = logs.iter().map(|d| d * d).sum::<f64>() / m;
        let mean = logs.iter().sum::<f64>() / m;
        (mean_sq.sqrt(), (mean_sq - mean * mean).max(0.0).sqrt())
    };
    Ok(ReconMetrics {
        l1_norm: l1,
        l2_norm: sq.sqrt(),
        abs_rel: rel[0] / nr,
        sq_rel: rel[1] / nr,
        rmse_linear: (sq / n).sqrt(),
        rmse_log,
        rmse_scale_inv,
        thresh_1_25: hits[0] as f64 / nr,
        thresh_2_5: hits[1] as f64 / nr,
        thresh_3_75: hits[2] as f64 / nr,
    })
}

/// Field-wise mean over a set of images.
pub fn mean_recon(items: &[ReconMetrics]) -> Option<ReconMetrics> {
    if items.is_empty() {
        return None;
    }
    let n = items.len() as f64;
    let avg = |f: fn(&ReconMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
    Some(ReconMetrics {
        l1_norm: avg(|m| m.l1_norm),
        l2_norm: avg(|m| m.l2_norm),
        abs_rel: avg(|m| m.abs_rel),
        sq_rel: avg(|m| m.sq_rel),
        rmse_linear: avg(|m| m.rmse_linear),
        rmse_log: avg(|m| m.rmse_log),
        rmse_scale_inv: avg(|m| m.rmse_scale_inv),
        thresh_1_25: avg(|m| m.thresh_1_25),
        thresh_2_5: avg(|m| m.thresh_2_5),
        thresh_3_75: avg(|m| m.thresh_3_75),
    })
}

/// Maps a `[-1, 1]` image to the positive range used for reconstruction metrics.
pub fn to_metric_units(image: &Image) -> Image {
    image.map(|v| v + 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseReport {
    pub frames: usize,
    /// Mean absolute error per angle (pitch, roll, yaw), degrees.
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub accuracy: f64,
}

pub fn pose_report(preds: &[PoseAngles], gts: &[PoseAngles]) -> Result<PoseReport, MetricsError> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(MetricsError::LengthMismatch(preds.len(), gts.len()));
    }
    let errors: Vec<[f64; 3]> = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            let (p, g) = (p.to_array(), g.to_array());
            [0, 1, 2].map(|i| (p[i] - g[i]).abs())
        })
        .collect();
    let n = errors.len() as f64;
    let mean = [0, 1, 2].map(|i| errors.iter().map(|e| e[i]).sum::<f64>() / n);
    let std = [0, 1, 2].map(|i| (errors.iter().map(|e| (e[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt());
    let good = errors.iter().flatten().filter(|&&e| e < ACCURACY_THRESHOLD_DEG).count();
    Ok(PoseReport { frames: errors.len(), mean, std, accuracy: good as f64 / (3.0 * n) })
}

/// One report entry: a metric value for a model on a dataset split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub split: String,
    pub model: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub rows: Vec<ReportRow>,
}

pub fn pose_rows(dataset: &str, split: &str, model: &str, report: &PoseReport) -> Vec<ReportRow> {
    let row = |metric: String, value: f64| ReportRow {
        dataset: dataset.into(),
        split: split.into(),
        model: model.into(),
        metric,
        value,
    };
    let mut rows = vec![row("frames".into(), report.frames as f64)];
    for (i, angle) in ["pitch", "roll", "yaw"].iter().enumerate() {
        rows.push(row(format!("{angle}_err_mean"), report.mean[i]));
        rows.push(row(format!("{angle}_err_std"), report.std[i]));
    }
    rows.push(row("accuracy".into(), report.accuracy));
    rows
}

pub fn recon_rows(dataset: &str, split: &str, model: &str, m: &ReconMetrics) -> Vec<ReportRow> {
    m.fields()
        .iter()
        .map(|(name, value)| ReportRow {
            dataset: dataset.into(),
            split: split.into(),
            model: model.into(),
            metric: (*name).into(),
            value: *value,
        })
        .collect()
}

/// Writes `<stem>.csv` and `<stem>.json` and returns both paths.
pub fn emit_report(rows: &[ReportRow], dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), MetricsError> {
    let io = |e: &dyn std::fmt::Display| MetricsError::Io(e.to_string());
    fs::create_dir_all(dir).map_err(|e| io(&e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| io(&e))?;
    w.write_record(["schema_version", "dataset", "split", "model", "metric", "value"]).map_err(|e| io(&e))?;
    for r in rows {
        let version = REPORT_SCHEMA_VERSION.to_string();
        w.write_record([version.as_str(), &r.dataset, &r.split, &r.model, &r.metric, &format!("{}", r.value)])
            .map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))?;
    let file = ReportFile { schema_version: REPORT_SCHEMA_VERSION, rows: rows.to_vec() };
    let json = serde_json::to_string_pretty(&file).map_err(|e| io(&e))?;
    fs::write(&json_path, json + "\n").map_err(|e| io(&e))?;
    Ok((csv_path, json_path))
}

pub fn read_report_csv(path: &Path) -> Result<ReportFile, MetricsError> {
    let io = |e: &dyn std::fmt::Display| MetricsError::Io(e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(|e| io(&e))?;
    let mut rows = Vec::new();
    let mut version = REPORT_SCHEMA_VERSION;
    for rec in r.records() {
        let rec = rec.map_err(|e| io(&e))?;
        if rec.len() != 6 {
            return Err(MetricsError::Io(format!("expected 6 columns, got {}", rec.len())));
        }
        version = rec[0].parse().map_err(|e| io(&e))?;
        rows.push(ReportRow {
            dataset: rec[1].into(),
            split: rec[2].into(),
            model: rec[3].into(),
            metric: rec[4].into(),
            value: rec[5].parse().map_err(|e| io(&e))?,
        });
    }
    Ok(ReportFile { schema_version: version, rows })
}

pub fn read_report_json(path: &Path) -> Result<ReportFile, MetricsError> {
    let text = fs::read_to_string(path).map_err(|e| MetricsError::Io(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| MetricsError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images() {
        let g = Image::from_fn(5, 4, |x, y| 1.0 + (x * y) as f32 * 0.1);
        let m = recon_metrics(&g, &g).unwrap();
        assert_eq!(m.l1_norm + m.l2_norm + m.abs_rel + m.sq_rel + m.rmse_linear + m.rmse_log + m.rmse_scale_inv, 0.0);
        assert_eq!((m.thresh_1_25, m.thresh_2_5, m.thresh_3_75), (1.0, 1.0, 1.0));
    }

    #[test]
    fn doubled_prediction() {
        let g = Image::filled(6, 6, 1.5);
        let m = recon_metrics(&g.map(|v| 2.0 * v), &g).unwrap();
        assert!((m.abs_rel - 1.0).abs() < 1e-12);
        assert_eq!((m.thresh_1_25, m.thresh_2_5), (0.0, 1.0));
        assert!((m.rmse_log - 2f64.ln()).abs() < 1e-7);
        assert!(m.rmse_scale_inv < 1e-6);
    }

    #[test]
    fn single_pixel() {
        let m = recon_metrics(&Image::filled(1, 1, 3.0), &Image::filled(1, 1, 1.0)).unwrap();
        assert_eq!((m.l1_norm, m.rmse_linear, m.sq_rel, m.thresh_3_75), (2.0, 2.0, 4.0, 1.0));
    }

    #[test]
    fn masked_and_mismatched() {
        let z = Image::filled(3, 3, 0.0);
        assert!(matches!(recon_metrics(&z, &z), Err(MetricsError::AllMasked)));
        assert!(matches!(recon_metrics(&z, &Image::filled(3, 2, 1.0)), Err(MetricsError::ShapeMismatch(..))));
    }

    #[test]
    fn pose_accuracy_counts_angles() {
        let gt = [PoseAngles::new(0.0, 0.0, 0.0)];
        let r = pose_report(&[PoseAngles::new(5.0, -20.0, 10.0)], &gt).unwrap();
        assert_eq!(r.accuracy, 2.0 / 3.0);
        assert_eq!(r.mean, [5.0, 20.0, 10.0]);
        let r = pose_report(&gt, &gt).unwrap();
        assert_eq!((r.accuracy, r.mean), (1.0, [0.0; 3]));
        let r = pose_report(&[PoseAngles::new(15.0, 14.999, 0.0)], &gt).unwrap();
        assert_eq!(r.accuracy, 2.0 / 3.0);
        assert!(matches!(pose_report(&[], &[]), Err(MetricsError::LengthMismatch(0, 0))));
        assert!(pose_report(&gt, &[gt[0], gt[0]]).is_err());
    }

    #[test]
    fn report_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let (csv_path, _) = emit_report(&[], dir.path(), "empty").unwrap();
        let text = fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let report = PoseReport { frames: 3, mean: [1.5, 0.1, 2.0 / 3.0], std: [0.0, 0.2, 1e-9], accuracy: 0.875 };
        let rows = pose_rows("synthetic", "fold0", "trident", &report);
        let (c1, j1) = emit_report(&rows, dir.path(), "a").unwrap();
        let (c2, j2) = emit_report(&rows, dir.path(), "b").unwrap();
        assert_eq!(fs::read(&c1).unwrap(), fs::read(&c2).unwrap());
        assert_eq!(fs::read(&j1).unwrap(), fs::read(&j2).unwrap());
        assert_eq!(read_report_csv(&c1).unwrap().rows, rows);
        assert_eq!(read_report_json(&j1).unwrap().rows, rows);
    }
}
