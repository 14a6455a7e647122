//! Closed-form geometry: depth-driven crop boxes, the shoulder frame built
//! from skeleton joints, and Euler-angle conversion.
//!
//! Euler convention: intrinsic Z-Y'-X'' (yaw about Z, then pitch about the
//! new Y, then roll about the new X), i.e. `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::DepthFrame;

/// Side of the square window averaged to estimate the head distance.
pub const DEPTH_WINDOW: usize = 11;

/// Real-world head extent used for head crops (mm).
pub const HEAD_EXTENT_MM: (f64, f64) = (320.0, 320.0);

/// Real-world extent used for shoulder crops (mm).
pub const SHOULDER_EXTENT_MM: (f64, f64) = (850.0, 500.0);

/// Pitch within this many degrees of +-90 is reported as gimbal lock.
pub const GIMBAL_MARGIN_DEG: f64 = 0.1;

const DEGENERATE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("no valid depth pixel in the {DEPTH_WINDOW}x{DEPTH_WINDOW} window around ({x:.1}, {y:.1})")]
    NoValidDepth { x: f64, y: f64 },
    #[error("crop centre ({x:.1}, {y:.1}) lies outside the {width}x{height} frame")]
    CenterOutside { x: f64, y: f64, width: usize, height: usize },
    #[error("skeleton joints are degenerate (coincident or collinear)")]
    DegenerateFrame,
    #[error("invalid intrinsics: focal lengths must be positive")]
    InvalidIntrinsics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64) -> Result<Self, GeometryError> {
        if fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite() {
            Ok(Self { fx, fy })
        } else {
            Err(GeometryError::InvalidIntrinsics)
        }
    }

    /// Pinhole projection with the principal point at the frame centre.
    pub fn project(&self, p: &Vector3<f64>, width: usize, height: usize) -> (f64, f64) {
        (width as f64 / 2.0 + self.fx * p.x / p.z, height as f64 / 2.0 + self.fy * p.y / p.z)
    }
}

/// Axis-aligned box in pixels, described by centre and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropBox {
    pub center_x: f64,
    pub center_y: f64,
    pub width: f64,
    pub height: f64,
}

/// Pose in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseAngles {
    pub pitch: f64,
    pub roll: f64,
    pub yaw: f64,
}

impl PoseAngles {
    pub fn new(pitch: f64, roll: f64, yaw: f64) -> Self {
        Self { pitch, roll, yaw }
    }

    /// `[pitch, roll, yaw]`, the order used by network outputs and loss weights.
    pub fn to_array(self) -> [f64; 3] {
        [self.pitch, self.roll, self.yaw]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { pitch: a[0], roll: a[1], yaw: a[2] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Checks the annotated ranges of the Pandora head annotations.
    pub fn within_head_ranges(&self) -> bool {
        self.is_finite() && self.roll.abs() <= 70.0 && self.pitch.abs() <= 100.0 && self.yaw.abs() <= 125.0
    }
}

/// Left shoulder, right shoulder and spine base, in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkeletonJoints {
    pub left_shoulder: [f64; 3],
    pub right_shoulder: [f64; 3],
    pub spine_base: [f64; 3],
}

/// Mean of the valid (> 0) depth values in the square window centred on
/// the rounded pixel position. The window is clipped to the frame.
pub fn window_depth(depth: &DepthFrame, cx: f64, cy: f64) -> Option<f64> {
    let half = (DEPTH_WINDOW / 2) as isize;
    let (px, py) = (cx.round() as isize, cy.round() as isize);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in py - half..=py + half {
        for x in px - half..=px + half {
            if let Some(v) = depth.image().get_checked(x, y) {
                if DepthFrame::is_valid(v) {
                    sum += v as f64;
                    count += 1;
                }
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

fn dynamic_box(
    cx: f64,
    cy: f64,
    intrinsics: &CameraIntrinsics,
    depth: &DepthFrame,
    extent: (f64, f64),
) -> Result<CropBox, GeometryError> {
    let (w, h) = (depth.width() as f64, depth.height() as f64);
    let cx = cx.clamp(0.0, w - 1.0);
    let cy = cy.clamp(0.0, h - 1.0);
    let d = window_depth(depth, cx, cy).ok_or(GeometryError::NoValidDepth { x: cx, y: cy })?;
    Ok(CropBox { center_x: cx, center_y: cy, width: intrinsics.fx * extent.0 / d, height: intrinsics.fy * extent.1 / d })
}

/// Head bounding box: `w = fx * Rx / D`, `h = fy * Ry / D`, where `D` is
/// the mean valid depth around the head centre.
pub fn head_crop_box(
    center: (f64, f64),
    intrinsics: &CameraIntrinsics,
    depth: &DepthFrame,
    extent_mm: (f64, f64),
) -> Result<CropBox, GeometryError> {
    let (w, h) = (depth.width(), depth.height());
    if !(center.0 >= 0.0 && center.1 >= 0.0 && center.0 < w as f64 && center.1 < h as f64) {
        return Err(GeometryError::CenterOutside { x: center.0, y: center.1, width: w, height: h });
    }
    dynamic_box(center.0, center.1, intrinsics, depth, extent_mm)
}

/// Shoulder box centred a quarter head-height above the head centre, sized
/// like the head box but with the shoulder extent.
pub fn shoulder_crop_box(
    head: &CropBox,
    intrinsics: &CameraIntrinsics,
    depth: &DepthFrame,
    extent_mm: (f64, f64),
) -> Result<CropBox, GeometryError> {
    dynamic_box(head.center_x, head.center_y - head.height / 4.0, intrinsics, depth, extent_mm)
}

/// Shoulder frame from skeleton joints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShoulderFrame {
    /// Rows are the frame axes; always a proper rotation.
    pub rotation: Matrix3<f64>,
    /// True when the raw axes formed a left-handed frame and the second axis
    /// was reflected.
    pub reflected: bool,
}

/// Builds the frame `N1 = (RS - LS)/|..|`, `U = (RS - SB)/|..|`,
/// `N3 = (N1 x U)/|..|`, `N2 = N1 x N3`. The raw triad is left-handed, so
/// `N2` is reflected to return a proper rotation.
pub fn shoulder_rotation(joints: &SkeletonJoints) -> Result<ShoulderFrame, GeometryError> {
    let ls = Vector3::from(joints.left_shoulder);
    let rs = Vector3::from(joints.right_shoulder);
    let sb = Vector3::from(joints.spine_base);
    let across = rs - ls;
    let up = rs - sb;
    if across.norm() < DEGENERATE_EPS || up.norm() < DEGENERATE_EPS {
        return Err(GeometryError::DegenerateFrame);
    }
    let n1 = across / across.norm();
    let u = up / up.norm();
    let cross = n1.cross(&u);
    if cross.norm() < DEGENERATE_EPS {
        return Err(GeometryError::DegenerateFrame);
    }
    let n3 = cross / cross.norm();
    let mut n2 = n1.cross(&n3);
    let raw = Matrix3::from_rows(&[n1.transpose(), n2.transpose(), n3.transpose()]);
    let reflected = raw.determinant() < 0.0;
    if reflected {
        n2 = -n2;
    }
    Ok(ShoulderFrame { rotation: Matrix3::from_rows(&[n1.transpose(), n2.transpose(), n3.transpose()]), reflected })
}

/// Places joints so that [`shoulder_rotation`] returns `rotation` exactly:
/// shoulders at `centre +- half_width * N1`, spine base at `centre - drop * N2`.
pub fn joints_for_rotation(rotation: &Matrix3<f64>, centre: [f64; 3], half_width: f64, drop: f64) -> SkeletonJoints {
    let c = Vector3::from(centre);
    let n1 = rotation.row(0).transpose();
    let n2 = rotation.row(1).transpose();
    SkeletonJoints {
        left_shoulder: (c - half_width * n1).into(),
        right_shoulder: (c + half_width * n1).into(),
        spine_base: (c - drop * n2).into(),
    }
}

pub fn rot_x(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn euler_to_rotation(pose: &PoseAngles) -> Matrix3<f64> {
    rot_z(pose.yaw) * rot_y(pose.pitch) * rot_x(pose.roll)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerDecomposition {
    pub angles: PoseAngles,
    /// Pitch is within [`GIMBAL_MARGIN_DEG`] of +-90; roll was set to 0.
    pub gimbal_lock: bool,
}

/// Inverse of [`euler_to_rotation`]. Fails if `r` is not orthonormal
/// within 1e-6.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> Result<EulerDecomposition, GeometryError> {
    if (r * r.transpose() - Matrix3::identity()).abs().max() > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
        return Err(GeometryError::DegenerateFrame);
    }
    let sp = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sp.asin().to_degrees();
    if 90.0 - pitch.abs() < GIMBAL_MARGIN_DEG {
        // roll and yaw are coupled; keep their combination in yaw
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]).to_degrees();
        return Ok(EulerDecomposition { angles: PoseAngles::new(pitch, 0.0, yaw), gimbal_lock: true });
    }
    let roll = r[(2, 1)].atan2(r[(2, 2)]).to_degrees();
    let yaw = r[(1, 0)].atan2(r[(0, 0)]).to_degrees();
    Ok(EulerDecomposition { angles: PoseAngles::new(pitch, roll, yaw), gimbal_lock: false })
}
