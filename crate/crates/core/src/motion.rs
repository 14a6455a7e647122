//! Dense optical flow by polynomial expansion and the motion-image encoding.

use std::path::Path;

use image::{ImageBuffer, Luma};
use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;

#[derive(Debug, Error, PartialEq)]
pub enum MotionError {
    #[error("frame shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("flow dump {path}: {reason}")]
    Dump { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub levels: usize,
    pub pyramid_scale: f64,
    pub window: usize,
    pub iterations: usize,
    /// Polynomial neighbourhood size (odd).
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self { levels: 3, pyramid_scale: 0.5, window: 15, iterations: 3, poly_n: 5, poly_sigma: 1.1 }
    }
}

/// Per-pixel displacement (pixels) taking `prev` onto `curr`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub dx: Image,
    pub dy: Image,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { dx: Image::new(width, height), dy: Image::new(width, height) }
    }

    pub fn width(&self) -> usize {
        self.dx.width()
    }

    pub fn height(&self) -> usize {
        self.dx.height()
    }

    pub fn is_finite(&self) -> bool {
        self.dx.data().iter().chain(self.dy.data()).all(|v| v.is_finite())
    }

    pub fn negated(&self) -> Self {
        Self { dx: self.dx.map(|v| -v), dy: self.dy.map(|v| -v) }
    }

    fn resized(&self, width: usize, height: usize) -> Self {
        let sx = (width as f64 / self.width() as f64) as f32;
        let sy = (height as f64 / self.height() as f64) as f32;
        Self { dx: self.dx.resize(width, height).map(|v| v * sx), dy: self.dy.resize(width, height).map(|v| v * sy) }
    }
}

/// Two channels in `[-1, 1]`: scaled dx and dy.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionImage {
    pub dx: Image,
    pub dy: Image,
}

impl MotionImage {
    /// The "no motion" sentinel used for the first frame of a sequence.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { dx: Image::new(width, height), dy: Image::new(width, height) }
    }

    pub fn width(&self) -> usize {
        self.dx.width()
    }

    pub fn height(&self) -> usize {
        self.dx.height()
    }

    pub fn is_zero(&self) -> bool {
        self.dx.data().iter().chain(self.dy.data()).all(|&v| v == 0.0)
    }

    /// Channel-major data (dx plane then dy plane).
    pub fn to_planes(&self) -> Vec<f32> {
        let mut out = self.dx.data().to_vec();
        out.extend_from_slice(self.dy.data());
        out
    }
}

pub const DEFAULT_CLIP: f32 = 8.0;

pub fn flow_to_motion_image(flow: &FlowField, clip: f32) -> MotionImage {
    let enc = |v: f32| (v / clip).clamp(-1.0, 1.0);
    MotionImage { dx: flow.dx.map(enc), dy: flow.dy.map(enc) }
}

/// Quadratic fit coefficients per pixel: f ≈ a11 x² + 2 a12 xy + a22 y² + b1 x + b2 y + c.
struct Expansion {
    width: usize,
    a11: Vec<f32>,
    a12: Vec<f32>,
    a22: Vec<f32>,
    b1: Vec<f32>,
    b2: Vec<f32>,
}

impl Expansion {
    fn sample(&self, x: f64, y: f64) -> [f32; 5] {
        let h = self.a11.len() / self.width;
        let planes = [&self.a11, &self.a12, &self.a22, &self.b1, &self.b2];
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
        let cx = |v: isize| v.clamp(0, self.width as isize - 1) as usize;
        let cy = |v: isize| v.clamp(0, h as isize - 1) as usize;
        let (xa, xb) = (cx(x0 as isize), cx(x0 as isize + 1));
        let (ya, yb) = (cy(y0 as isize), cy(y0 as isize + 1));
        let w = self.width;
        planes.map(|p| {
            let top = p[ya * w + xa] * (1.0 - fx) + p[ya * w + xb] * fx;
            let bot = p[yb * w + xa] * (1.0 - fx) + p[yb * w + xb] * fx;
            top * (1.0 - fy) + bot * fy
        })
    }
}

fn poly_expand(img: &Image, n: usize, sigma: f64) -> Expansion {
    let half = (n / 2) as isize;
    let mut taps = Vec::new();
    for dy in -half..=half {
        for dx in -half..=half {
            let (x, y) = (dx as f64, dy as f64);
            let w = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            taps.push((dx, dy, w, Vector6::new(1.0, x, y, x * x, y * y, x * y)));
        }
    }
    let mut g = Matrix6::<f64>::zeros();
    for (_, _, w, b) in &taps {
        g += *w * b * b.transpose();
    }
    let g_inv = g.try_inverse().expect("polynomial basis is full rank");
    let (wd, ht) = (img.width(), img.height());
    let len = wd * ht;
    let mut e = Expansion {
        width: wd,
        a11: vec![0.0; len],
        a12: vec![0.0; len],
        a22: vec![0.0; len],
        b1: vec![0.0; len],
        b2: vec![0.0; len],
    };
    for y in 0..ht {
        for x in 0..wd {
            let mut acc = Vector6::<f64>::zeros();
            for (dx, dy, w, b) in &taps {
                let v = img.get_clamped(x as isize + dx, y as isize + dy) as f64;
                acc += (*w * v) * b;
            }
            let r = g_inv * acc;
            let i = y * wd + x;
            e.b1[i] = r[1] as f32;
            e.b2[i] = r[2] as f32;
            e.a11[i] = r[3] as f32;
            e.a22[i] = r[4] as f32;
            e.a12[i] = (r[5] / 2.0) as f32;
        }
    }
    e
}

/// Sum over a `window`×`window` box, border pixels replicated.
fn box_sum(data: &[f64], width: usize, height: usize, window: usize) -> Vec<f64> {
    let half = (window / 2) as isize;
    let mut rows = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut s = 0.0;
            for k in -half..=half {
                let xx = (x as isize + k).clamp(0, width as isize - 1) as usize;
                s += data[y * width + xx];
            }
            rows[y * width + x] = s;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut s = 0.0;
            for k in -half..=half {
                let yy = (y as isize + k).clamp(0, height as isize - 1) as usize;
                s += rows[yy * width + x];
            }
            out[y * width + x] = s;
        }
    }
    out
}

fn refine(e1: &Expansion, e2: &Expansion, flow: &mut FlowField, window: usize) {
    let (w, h) = (flow.width(), flow.height());
    let len = w * h;
    let mut g11 = vec![0.0; len];
    let mut g12 = vec![0.0; len];
    let mut g22 = vec![0.0; len];
    let mut h1 = vec![0.0; len];
    let mut h2 = vec![0.0; len];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (dx, dy) = (flow.dx.get(x, y) as f64, flow.dy.get(x, y) as f64);
            let [a11b, a12b, a22b, b1b, b2b] = e2.sample(x as f64 + dx, y as f64 + dy).map(f64::from);
            let a11 = (e1.a11[i] as f64 + a11b) / 2.0;
            let a12 = (e1.a12[i] as f64 + a12b) / 2.0;
            let a22 = (e1.a22[i] as f64 + a22b) / 2.0;
            let db1 = -0.5 * (b1b - e1.b1[i] as f64) + a11 * dx + a12 * dy;
            let db2 = -0.5 * (b2b - e1.b2[i] as f64) + a12 * dx + a22 * dy;
            g11[i] = a11 * a11 + a12 * a12;
            g12[i] = a12 * (a11 + a22);
            g22[i] = a12 * a12 + a22 * a22;
            h1[i] = a11 * db1 + a12 * db2;
            h2[i] = a12 * db1 + a22 * db2;
        }
    }
    let [g11, g12, g22, h1, h2] = [g11, g12, g22, h1, h2].map(|v| box_sum(&v, w, h, window));
    for i in 0..len {
        let reg = 1e-3 * (g11[i] + g22[i]) + 1e-12;
        let (a, b, d) = (g11[i] + reg, g12[i], g22[i] + reg);
        let det = a * d - b * b;
        let ux = (d * h1[i] - b * h2[i]) / det;
        let uy = (a * h2[i] - b * h1[i]) / det;
        flow.dx.data_mut()[i] = ux as f32;
        flow.dy.data_mut()[i] = uy as f32;
    }
}

fn blur(img: &Image) -> Image {
    const K: [f32; 5] = [0.0545, 0.2442, 0.4026, 0.2442, 0.0545];
    let horiz = Image::from_fn(img.width(), img.height(), |x, y| {
        (0..5).map(|k| K[k] * img.get_clamped(x as isize + k as isize - 2, y as isize)).sum()
    });
    Image::from_fn(img.width(), img.height(), |x, y| {
        (0..5).map(|k| K[k] * horiz.get_clamped(x as isize, y as isize + k as isize - 2)).sum()
    })
}

fn pyramid(img: &Image, params: &FlowParams) -> Vec<Image> {
    let mut levels = vec![img.clone()];
    while levels.len() < params.levels.max(1) {
        let last = levels.last().expect("non-empty");
        let w = (last.width() as f64 * params.pyramid_scale).round() as usize;
        let h = (last.height() as f64 * params.pyramid_scale).round() as usize;
        if w < 8 || h < 8 {
            break;
        }
        let next = blur(last).resize(w, h);
        levels.push(next);
    }
    levels
}

pub fn farneback_flow(prev: &Image, curr: &Image, params: &FlowParams) -> Result<FlowField, MotionError> {
    let (pw, ph) = (prev.width(), prev.height());
    if (pw, ph) != (curr.width(), curr.height()) {
        return Err(MotionError::ShapeMismatch((pw, ph), (curr.width(), curr.height())));
    }
    let p1 = pyramid(prev, params);
    let p2 = pyramid(curr, params);
    let mut flow: Option<FlowField> = None;
    for (a, b) in p1.iter().zip(&p2).rev() {
        let mut f = match flow {
            None => FlowField::zeros(a.width(), a.height()),
            Some(f) => f.resized(a.width(), a.height()),
        };
        let e1 = poly_expand(a, params.poly_n, params.poly_sigma);
        let e2 = poly_expand(b, params.poly_n, params.poly_sigma);
        for _ in 0..params.iterations {
            refine(&e1, &e2, &mut f, params.window);
        }
        flow = Some(f);
    }
    Ok(flow.expect("at least one pyramid level"))
}

/// Motion image between two consecutive crops.
pub fn motion_image(prev: &Image, curr: &Image) -> Result<MotionImage, MotionError> {
    Ok(flow_to_motion_image(&farneback_flow(prev, curr, &FlowParams::default())?, DEFAULT_CLIP))
}

const DUMP_OFFSET: f32 = 32768.0;
const DUMP_UNITS_PER_PX: f32 = 64.0;

/// Writes `<stem>_dx.png` and `<stem>_dy.png` as 16-bit offset images.
pub fn write_flow_debug(flow: &FlowField, dir: &Path, stem: &str) -> Result<(), MotionError> {
    for (name, plane) in [("dx", &flow.dx), ("dy", &flow.dy)] {
        let path = dir.join(format!("{stem}_{name}.png"));
        let raw: Vec<u16> = plane
            .data()
            .iter()
            .map(|&v| (DUMP_OFFSET + v * DUMP_UNITS_PER_PX).round().clamp(0.0, 65535.0) as u16)
            .collect();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(plane.width() as u32, plane.height() as u32, raw).expect("sized from plane");
        buf.save(&path).map_err(|e| MotionError::Dump { path: path.display().to_string(), reason: e.to_string() })?;
    }
    Ok(())
}

pub fn read_flow_debug(dir: &Path, stem: &str) -> Result<FlowField, MotionError> {
    let load = |name: &str| -> Result<Image, MotionError> {
        let path = dir.join(format!("{stem}_{name}.png"));
        let err = |reason: String| MotionError::Dump { path: path.display().to_string(), reason };
        let img = image::open(&path).map_err(|e| err(e.to_string()))?;
        let img = img.as_luma16().ok_or_else(|| err("not a 16-bit gray image".into()))?;
        let data = img.pixels().map(|p| (p.0[0] as f32 - DUMP_OFFSET) / DUMP_UNITS_PER_PX).collect();
        Ok(Image::from_vec(img.width() as usize, img.height() as usize, data))
    };
    Ok(FlowField { dx: load("dx")?, dy: load("dy")? })
}
