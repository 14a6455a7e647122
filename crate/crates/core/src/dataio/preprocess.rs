use crate::image::Image;

pub const PERCENTILE_LOW: f64 = 0.02;
pub const PERCENTILE_HIGH: f64 = 0.98;
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Nearest-rank percentile (`q` in `[0, 1]`) of an unsorted slice. Always
/// returns an element of the input.
pub fn percentile(values: &[f32], q: f64) -> f32 {
    assert!(!values.is_empty(), "percentile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let idx = ((sorted.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    sorted[idx]
}

/// Contrast stretch so the 2nd/98th percentiles span `[0, 1]` (values
/// outside are clipped), then standardise to zero mean and unit variance.
/// Flat images come out as all zeros.
pub fn preprocess(image: &Image) -> Image {
    assert!(!image.is_empty(), "cannot preprocess an empty image");
    let lo = percentile(image.data(), PERCENTILE_LOW) as f64;
    let hi = percentile(image.data(), PERCENTILE_HIGH) as f64;
    let range = hi - lo;
    let stretched: Vec<f64> = if range > 0.0 {
        image.data().iter().map(|&v| ((v as f64 - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; image.data().len()]
    };
    let n = stretched.len() as f64;
    let mean = stretched.iter().sum::<f64>() / n;
    let var = stretched.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / var.max(VARIANCE_FLOOR).sqrt();
    Image::from_vec(
        image.width(),
        image.height(),
        stretched.iter().map(|v| ((v - mean) * inv) as f32).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(img: &Image) -> (f64, f64) {
        let n = img.data().len() as f64;
        let m = img.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let v = img.data().iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / n;
        (m, v)
    }

    #[test]
    fn constant_maps_to_zeros() {
        let out = preprocess(&Image::filled(8, 8, 700.0));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_valued_maps_to_plus_minus_one() {
        let img = Image::from_fn(10, 10, |x, _| if x < 5 { 100.0 } else { 900.0 });
        let out = preprocess(&img);
        for (i, v) in out.data().iter().enumerate() {
            let want = if i % 10 < 5 { -1.0 } else { 1.0 };
            assert!((v - want).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn standardised_and_idempotent(vals in proptest::collection::vec(0.0f32..5000.0, 64)) {
            let img = Image::from_vec(8, 8, vals);
            let once = preprocess(&img);
            let (m, v) = stats(&once);
            prop_assert!(m.abs() < 1e-6);
            if v > 0.0 {
                prop_assert!((v - 1.0).abs() < 1e-4);
            }
            let twice = preprocess(&once);
            for (a, b) in once.data().iter().zip(twice.data()) {
                prop_assert!((a - b).abs() < 1e-5);
            }
        }
    }
}
