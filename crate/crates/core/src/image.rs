use serde::{Deserialize, Serialize};

use crate::geometry::CropBox;

/// Single-channel `f32` raster, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    /// Panics if `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "image buffer has wrong length");
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Value at integer coordinates, or `None` outside the raster.
    pub fn get_checked(&self, x: isize, y: isize) -> Option<f32> {
        (x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height)
            .then(|| self.data[y as usize * self.width + x as usize])
    }

    /// Border-replicating lookup.
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Bilinear sample with border replication.
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(x0, y0);
        let b = self.get_clamped(x0 + 1, y0);
        let c = self.get_clamped(x0, y0 + 1);
        let d = self.get_clamped(x0 + 1, y0 + 1);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Extracts the box region at its nominal (rounded) size; pixels outside
    /// the source are zero.
    pub fn crop_padded(&self, bx: &CropBox) -> Image {
        let w = bx.width.round().max(1.0) as usize;
        let h = bx.height.round().max(1.0) as usize;
        let x0 = (bx.center_x - w as f64 / 2.0).round() as isize;
        let y0 = (bx.center_y - h as f64 / 2.0).round() as isize;
        Image::from_fn(w, h, |x, y| self.get_checked(x0 + x as isize, y0 + y as isize).unwrap_or(0.0))
    }

    /// Bilinear resize using pixel-centre alignment.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Image::from_fn(width, height, |x, y| self.sample((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// Depth map in millimetres; 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthFrame(pub Image);

impl DepthFrame {
    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn is_valid(v: f32) -> bool {
        v > 0.0
    }
}

/// Gray-level intensity image normalised to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayFrame(pub Image);

impl GrayFrame {
    pub fn image(&self) -> &Image {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_pads_outside_source() {
        let img = Image::filled(10, 10, 1.0);
        let bx = CropBox { center_x: 0.0, center_y: 5.0, width: 4.0, height: 2.0 };
        let c = img.crop_padded(&bx);
        assert_eq!((c.width(), c.height()), (4, 2));
        assert_eq!(c.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn resize_of_constant_is_constant() {
        let img = Image::filled(7, 5, 3.5);
        let r = img.resize(16, 11);
        assert!(r.data().iter().all(|&v| (v - 3.5).abs() < 1e-6));
    }
}
