use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::image::Image;

/// Maximum translation as a fraction of the image side.
pub const MAX_SHIFT_FRACTION: f64 = 0.10;
pub const ZOOM_RANGE: (f64, f64) = (0.9, 1.1);
/// Additive noise standard deviation relative to the image value range.
pub const JITTER_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    /// Translation in pixels (positive = right / down).
    pub shift: (f64, f64),
    /// Zoom about the image centre (> 1 zooms in).
    pub zoom: f64,
    /// Standard deviation of the additive noise, as a fraction of the value range.
    pub jitter: f64,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation { shift: (0.0, 0.0), zoom: 1.0, jitter: 0.0 };
}

pub fn sample_augmentation(rng: &mut impl Rng, width: usize, height: usize) -> Augmentation {
    let mx = MAX_SHIFT_FRACTION * width as f64;
    let my = MAX_SHIFT_FRACTION * height as f64;
    Augmentation {
        shift: (rng.gen_range(-mx..=mx), rng.gen_range(-my..=my)),
        zoom: rng.gen_range(ZOOM_RANGE.0..=ZOOM_RANGE.1),
        jitter: JITTER_FRACTION,
    }
}

fn sample_or_zero(img: &Image, x: f64, y: f64) -> f32 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |dx, dy| img.get_checked(x0 + dx, y0 + dy).unwrap_or(0.0);
    (at(0, 0) * (1.0 - fx) + at(1, 0) * fx) * (1.0 - fy) + (at(0, 1) * (1.0 - fx) + at(1, 1) * fx) * fy
}

/// Applies a fixed transform; `rng` only drives the jitter noise. Pixels
/// uncovered by the transform become 0.
pub fn apply_augmentation(image: &Image, aug: &Augmentation, rng: &mut impl Rng) -> Image {
    let cx = (image.width() as f64 - 1.0) / 2.0;
    let cy = (image.height() as f64 - 1.0) / 2.0;
    let mut out = Image::from_fn(image.width(), image.height(), |x, y| {
        let sx = (x as f64 - aug.shift.0 - cx) / aug.zoom + cx;
        let sy = (y as f64 - aug.shift.1 - cy) / aug.zoom + cy;
        sample_or_zero(image, sx, sy)
    });
    if aug.jitter > 0.0 {
        let (lo, hi) = image.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let sigma = aug.jitter * (hi - lo) as f64;
        if sigma > 0.0 {
            let noise = Normal::new(0.0, sigma).expect("finite sigma");
            out.data_mut().iter_mut().for_each(|v| *v += noise.sample(rng) as f32);
        }
    }
    out
}

/// One random translation / zoom / jitter transform; same shape out.
pub fn augment(image: &Image, rng: &mut impl Rng) -> Image {
    let aug = sample_augmentation(rng, image.width(), image.height());
    apply_augmentation(image, &aug, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_transform() {
        let img = Image::from_fn(9, 7, |x, y| (x * 3 + y) as f32);
        let out = apply_augmentation(&img, &Augmentation::IDENTITY, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out, img);
    }

    #[test]
    fn impulse_moves_right() {
        let mut img = Image::new(16, 16);
        img.set(6, 8, 1.0);
        let aug = Augmentation { shift: (5.0, 0.0), ..Augmentation::IDENTITY };
        let out = apply_augmentation(&img, &aug, &mut ChaCha8Rng::seed_from_u64(0));
        // oracle: shift indices directly
        let mut want = Image::new(16, 16);
        want.set(11, 8, 1.0);
        assert_eq!(out, want);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let img = Image::from_fn(32, 32, |x, y| ((x * y) % 17) as f32);
        let a = augment(&img, &mut ChaCha8Rng::seed_from_u64(42));
        let b = augment(&img, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn shape_kept_and_finite(seed in 0u64..1000, w in 4usize..40, h in 4usize..40) {
            let img = Image::from_fn(w, h, |x, y| (x as f32 - y as f32) * 0.5);
            let out = augment(&img, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!((out.width(), out.height()), (w, h));
            prop_assert!(out.data().iter().all(|v| v.is_finite()));
        }
    }
}
