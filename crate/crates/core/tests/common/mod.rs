//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the solver, objective, or perturbation code of
//! the library: norms, margins, losses, and step sizes are recomputed from
//! their definitions so the tests compare two unrelated implementations.

#![allow(dead_code)]

use mbl::LabeledDataset;

/// `‖v‖_p` from the definition, scaled by the largest entry so large `p`
/// does not overflow (`p = ∞` is the max norm).
pub fn pnorm(v: &[f64], p: f64) -> f64 {
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if p.is_infinite() || m == 0.0 {
        return m;
    }
    m * v.iter().map(|x| (x.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Conjugate exponent.
pub fn conj(q: f64) -> f64 {
    if q == 1.0 {
        f64::INFINITY
    } else if q.is_infinite() {
        1.0
    } else {
        q / (q - 1.0)
    }
}

pub fn z_points(ds: &LabeledDataset) -> Vec<[f64; 2]> {
    (0..ds.n())
        .map(|i| {
            let x = ds.point(i);
            [ds.label(i) * x[0], ds.label(i) * x[1]]
        })
        .collect()
}

/// Which 2-D margin objective the oracle scans.
#[derive(Clone, Copy)]
pub enum Objective2d {
    /// `max_{‖u‖_p = 1} min_i z_iᵀu`.
    MaxMargin { q: f64 },
    /// `max_{‖u‖₂ = 1} min_i z_iᵀu - c‖u‖_p`.
    Robust { q: f64, c: f64 },
    /// `max_{‖u‖₂ = 1} min_i z_iᵀu - c Σ_j √(u_j² + λ)`.
    Smoothed { c: f64, lambda: f64 },
}

fn objective_at(z: &[[f64; 2]], obj: Objective2d, phi: f64) -> (f64, [f64; 2]) {
    let (s, c) = phi.sin_cos();
    let mut u = [c, s];
    if let Objective2d::MaxMargin { q } = obj {
        let n = pnorm(&u, conj(q));
        u = [u[0] / n, u[1] / n];
    }
    let m = z.iter().map(|zi| zi[0] * u[0] + zi[1] * u[1]).fold(f64::INFINITY, f64::min);
    let v = match obj {
        Objective2d::MaxMargin { .. } => m,
        Objective2d::Robust { q, c } => m - c * pnorm(&u, conj(q)),
        Objective2d::Smoothed { c, lambda } => m - c * u.iter().map(|x| (x * x + lambda).sqrt()).sum::<f64>(),
    };
    (v, u)
}

/// Dense angle grid followed by golden-section refinement around the best
/// grid point. Returns `(γ, u)`.
pub fn grid_margin_2d(ds: &LabeledDataset, obj: Objective2d, grid: usize) -> (f64, [f64; 2]) {
    let z = z_points(ds);
    let h = std::f64::consts::TAU / grid as f64;
    let (mut best_k, mut best_v) = (0usize, f64::NEG_INFINITY);
    for k in 0..grid {
        let v = objective_at(&z, obj, k as f64 * h).0;
        if v > best_v {
            best_v = v;
            best_k = k;
        }
    }
    let f = |phi: f64| objective_at(&z, obj, phi).0;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = ((best_k as f64 - 1.0) * h, (best_k as f64 + 1.0) * h);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    while b - a > 1e-12 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    let phi = 0.5 * (a + b);
    let (v, u) = objective_at(&z, obj, phi);
    if v >= best_v {
        (v, u)
    } else {
        objective_at(&z, obj, best_k as f64 * h)
    }
}

/// `ln((1/n) Σ exp(-z_iᵀθ + c‖θ‖_p))` summed naively (moderate arguments
/// only).
pub fn naive_log_adv_loss(ds: &LabeledDataset, theta: &[f64], q: f64, c: f64) -> f64 {
    let pen = c * pnorm(theta, conj(q));
    let n = ds.n() as f64;
    let s: f64 = (0..ds.n())
        .map(|i| {
            let m: f64 = ds.point(i).iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() * ds.label(i);
            (-m + pen).exp()
        })
        .sum();
    (s / n).ln()
}

/// Step size of the ℓ2 theorem: `min{(γ/e) / ((1+c)³γ + 2c(1+c)), 1}`.
pub fn auto_l2_eta(gamma2: f64, c: f64) -> f64 {
    ((gamma2 / std::f64::consts::E) / ((1.0 + c).powi(3) * gamma2 + 2.0 * c * (1.0 + c))).min(1.0)
}

/// Step size of the smoothed-ℓ∞ theorem: `1/(1 + 2c/√λ)²`.
pub fn auto_smoothed_eta(c: f64, lambda: f64) -> f64 {
    1.0 / (1.0 + 2.0 * c / lambda.sqrt()).powi(2)
}

/// A random point of the ℓq ball of radius `c`: a random direction scaled
/// to the sphere, then by a random radius fraction (on the sphere itself
/// half of the time, where the competitive perturbations live).
pub fn random_in_lq_ball(rng: &mut impl rand::Rng, d: usize, q: f64, c: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = pnorm(&v, q);
    let r: f64 = if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.0..=1.0) };
    if n == 0.0 {
        return vec![0.0; d];
    }
    v.iter().map(|x| x / n * c * r).collect()
}
