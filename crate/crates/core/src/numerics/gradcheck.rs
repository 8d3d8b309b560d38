//! Central finite differences, used to validate analytic gradients.

/// Comparison between an analytic gradient and its finite-difference estimate.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`.
    pub rel_err: f64,
    pub max_abs_err: f64,
    pub numeric_norm: f64,
}

/// Central differences of `f` at `x`, perturbing one coordinate at a time.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn compare(analytic: &[f64], numeric: &[f64]) -> GradCheck {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let denom = norm(analytic).max(norm(numeric)).max(f64::MIN_POSITIVE);
    GradCheck {
        rel_err: norm(&diff) / denom,
        max_abs_err: diff.iter().fold(0.0, |m, d| m.max(d.abs())),
        numeric_norm: norm(numeric),
    }
}

pub fn check(f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], step: f64) -> GradCheck {
    compare(analytic, &numeric_gradient(f, x, step))
}
