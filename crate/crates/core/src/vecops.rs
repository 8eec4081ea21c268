//! Dense vector helpers for the small dimensions used throughout the crate.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * a.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Unit vector in the direction of `a`, or `None` at the origin.
pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm2(a);
    (n > 0.0 && n.is_finite()).then(|| scaled(a, 1.0 / n))
}

/// `1 - <a/|a|, u>` for a unit vector `u`; 1 at the origin.
pub fn alignment_error(a: &[f64], u: &[f64]) -> f64 {
    match normalized(a) {
        Some(v) => 1.0 - dot(&v, u),
        None => 1.0,
    }
}

/// Numerically stable `ln(sum(exp(v)))`; `-inf` for an empty slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
