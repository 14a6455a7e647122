//! Synthetic paired depth / gray dataset.
//!
//! Each frame ray-casts an ellipsoid head with an ellipsoid nose and a
//! shoulder ellipsoid below it. Depth is the analytic z-buffer in whole
//! millimetres, gray is Lambertian shading with darker eye patches, and
//! every annotation (head pose and centre, shoulder joints) is exact.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{write_dataset, DataError, FrameRecord};
use crate::geometry::{euler_to_rotation, joints_for_rotation, rotation_to_euler, CameraIntrinsics, PoseAngles};
use crate::image::{DepthFrame, GrayFrame, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Head semi-axes (forward, lateral, vertical), mm.
    pub head_axes: [f64; 3],
    /// Maximum absolute head angle, degrees.
    pub head_range: f64,
    /// Maximum absolute shoulder angle, degrees.
    pub shoulder_range: f64,
    /// Per-frame random-walk step (std-dev, degrees).
    pub pose_step: f64,
    /// Head distance range, mm.
    pub depth_range: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 160,
            height: 132,
            focal: 200.0,
            head_axes: [85.0, 75.0, 100.0],
            head_range: 40.0,
            shoulder_range: 25.0,
            pose_step: 6.0,
            depth_range: (750.0, 1000.0),
        }
    }
}

/// Scene parameters for one rendered frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    pub head_pose: PoseAngles,
    pub shoulder_pose: PoseAngles,
    /// Head centre in camera coordinates (x right, y down, z forward), mm.
    pub head_center: [f64; 3],
}

/// Maps head-model axes (forward, lateral, up) into camera axes: forward
/// faces the camera, up is image-up.
fn head_base() -> Matrix3<f64> {
    Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, -1.0, -1.0, 0.0, 0.0)
}

const NOSE_OFFSET: [f64; 3] = [78.0, 0.0, -8.0];
const NOSE_AXES: [f64; 3] = [32.0, 14.0, 26.0];
const SHOULDER_AXES: [f64; 3] = [180.0, 60.0, 90.0];
const SHOULDER_DROP: [f64; 3] = [0.0, 170.0, 40.0];
const SPINE_LENGTH: f64 = 400.0;
const EYES: [[f64; 3]; 2] = [[60.0, -30.0, 25.0], [60.0, 30.0, 25.0]];
const EYE_RADIUS: f64 = 14.0;

struct Ellipsoid {
    center: Vector3<f64>,
    /// Rows map camera offsets into local axes.
    to_local: Matrix3<f64>,
    axes: Vector3<f64>,
    is_head: bool,
}

impl Ellipsoid {
    /// Nearest intersection distance along `dir` (ray from the origin).
    fn hit(&self, dir: &Vector3<f64>) -> Option<f64> {
        let o = self.to_local * (-self.center);
        let d = self.to_local * dir;
        let inv = self.axes.map(|a| 1.0 / (a * a));
        let a = d.component_mul(&d).dot(&inv);
        let b = 2.0 * o.component_mul(&d).dot(&inv);
        let c = o.component_mul(&o).dot(&inv) - 1.0;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let t = (-b - disc.sqrt()) / (2.0 * a);
        (t > 0.0).then_some(t)
    }

    fn normal(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let q = self.to_local * (p - self.center);
        let n_local = q.component_div(&self.axes.component_mul(&self.axes));
        (self.to_local.transpose() * n_local).normalize()
    }
}

fn shoulder_frame(pose: &PoseAngles) -> Matrix3<f64> {
    euler_to_rotation(pose)
}

/// Renders depth (mm, 0 = background) and gray (`[0, 1]`) for a scene.
pub fn render(config: &SynthConfig, scene: &Scene) -> (DepthFrame, GrayFrame) {
    let head_rot = head_base() * euler_to_rotation(&scene.head_pose);
    let hc = Vector3::from(scene.head_center);
    let head = Ellipsoid { center: hc, to_local: head_rot.transpose(), axes: Vector3::from(config.head_axes), is_head: true };
    let nose = Ellipsoid {
        center: hc + head_rot * Vector3::from(NOSE_OFFSET),
        to_local: head_rot.transpose(),
        axes: Vector3::from(NOSE_AXES),
        is_head: false,
    };
    let shoulders = Ellipsoid {
        center: hc + Vector3::from(SHOULDER_DROP),
        to_local: shoulder_frame(&scene.shoulder_pose),
        axes: Vector3::from(SHOULDER_AXES),
        is_head: false,
    };
    let bodies = [head, nose, shoulders];
    let light = Vector3::new(0.3, -0.4, -1.0).normalize();
    let eye_centres: Vec<Vector3<f64>> = EYES.iter().map(|e| Vector3::from(*e)).collect();

    let (w, h) = (config.width, config.height);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut depth = Image::new(w, h);
    let mut gray = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let dir = Vector3::new((x as f64 + 0.5 - cx) / config.focal, (y as f64 + 0.5 - cy) / config.focal, 1.0);
            let best = bodies
                .iter()
                .filter_map(|b| b.hit(&dir).map(|t| (t, b)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((t, body)) = best {
                let p = dir * t;
                depth.set(x, y, t.round() as f32);
                let lambert = body.normal(&p).dot(&(-light)).max(0.0);
                let mut albedo = if body.is_head || std::ptr::eq(body, &bodies[1]) { 0.85 } else { 0.6 };
                if body.is_head {
                    let local = body.to_local * (p - body.center);
                    if eye_centres.iter().any(|e| (local - e).norm() < EYE_RADIUS) {
                        albedo = 0.25;
                    }
                }
                let v = 0.1 + albedo * lambert;
                gray.set(x, y, ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32);
            }
        }
    }
    (DepthFrame(depth), GrayFrame(gray))
}

/// Annotated record for a scene, with the annotations expressed exactly as
/// the loader derives them from the written files.
pub fn scene_record(config: &SynthConfig, scene: &Scene, subject: &str, sequence: &str, index: u32) -> FrameRecord {
    let (depth, gray) = render(config, scene);
    let intrinsics = CameraIntrinsics::new(config.focal, config.focal).expect("positive focal length");
    let centre = Vector3::from(scene.head_center);
    let sr = shoulder_frame(&scene.shoulder_pose);
    let joints = joints_for_rotation(&sr, (centre + Vector3::from(SHOULDER_DROP)).into(), SHOULDER_AXES[0], SPINE_LENGTH);
    FrameRecord {
        subject_id: subject.to_string(),
        sequence_id: sequence.to_string(),
        frame_index: index,
        head_center_2d: Some(intrinsics.project(&centre, config.width, config.height)),
        head_center_3d: Some(scene.head_center),
        head_pose: Some(rotation_to_euler(&euler_to_rotation(&scene.head_pose)).expect("rotation").angles),
        shoulder_pose: Some(rotation_to_euler(&sr).expect("rotation").angles),
        joints: Some(joints),
        depth,
        gray: Some(gray),
        intrinsics,
    }
}

fn clamp_pose(p: PoseAngles, limit: f64) -> PoseAngles {
    PoseAngles::from_array(p.to_array().map(|v| v.clamp(-limit, limit)))
}

/// In-memory generation: one sequence per subject, poses following a
/// clamped random walk. Deterministic in `seed`.
pub fn generate(config: &SynthConfig, n_subjects: usize, frames_per_subject: usize, seed: u64) -> Vec<FrameRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = Normal::new(0.0, config.pose_step).expect("finite step");
    let mut out = Vec::with_capacity(n_subjects * frames_per_subject);
    for s in 0..n_subjects {
        let subject = format!("{:02}", s + 1);
        let uniform_pose = |rng: &mut ChaCha8Rng, r: f64| {
            PoseAngles::new(rng.gen_range(-r..=r), rng.gen_range(-r..=r), rng.gen_range(-r..=r))
        };
        let mut head = uniform_pose(&mut rng, config.head_range);
        let mut shoulders = uniform_pose(&mut rng, config.shoulder_range);
        let z = rng.gen_range(config.depth_range.0..=config.depth_range.1);
        let u = rng.gen_range(-0.15..=0.15) * config.width as f64;
        let v = rng.gen_range(-0.12..=0.08) * config.height as f64;
        let mut centre = [u * z / config.focal, v * z / config.focal, z];
        for f in 0..frames_per_subject {
            if f > 0 {
                let jitter = |p: PoseAngles, rng: &mut ChaCha8Rng| {
                    PoseAngles::from_array(p.to_array().map(|v| v + step.sample(rng)))
                };
                head = clamp_pose(jitter(head, &mut rng), config.head_range);
                shoulders = clamp_pose(jitter(shoulders, &mut rng), config.shoulder_range);
                centre[0] += rng.gen_range(-4.0..=4.0);
                centre[1] += rng.gen_range(-4.0..=4.0);
            }
            let scene = Scene { head_pose: head, shoulder_pose: shoulders, head_center: centre };
            out.push(scene_record(config, &scene, &subject, "00", f as u32));
        }
    }
    out
}

/// Generates a dataset and writes it in the canonical layout.
pub fn synth_generate(
    config: &SynthConfig,
    n_subjects: usize,
    frames_per_subject: usize,
    seed: u64,
    out_root: &Path,
) -> Result<Vec<FrameRecord>, DataError> {
    assert!(n_subjects >= 1, "need at least one subject");
    let records = generate(config, n_subjects, frames_per_subject, seed);
    write_dataset(out_root, &records)?;
    Ok(records)
}
