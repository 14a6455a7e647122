//! Central finite differences, used by tests across the workspace.

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate.
pub fn numeric_gradient(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error over paired gradients.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(a, n)| relative_error(*a, *n, floor)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient() {
        let g = numeric_gradient(&[2.0, -1.0], 1e-5, |x| x[0].powi(3) + 4.0 * x[1]);
        assert!(relative_error(g[0], 12.0, 1e-12) < 1e-8);
        assert!(relative_error(g[1], 4.0, 1e-12) < 1e-8);
    }
}
