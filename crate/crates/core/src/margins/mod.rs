//! Max-margin and robust (mixed-norm) margin problems, support vectors, and
//! the data constants that control the orthogonal drift of the iterates.
//!
//! * `max_margin`: `γ_q = max_{‖u‖_p ≤ 1} min_i z_iᵀu`.
//! * `robust_mixed_margin`: `γ_{2,q}(c) = max_{‖u‖₂ ≤ 1} min_i z_iᵀu - pen(u)`
//!   with `pen = c‖·‖_p` (or `c·H_λ` for the smoothed adversary).
//!
//! Both are concave maximizations over a norm ball and are solved by the
//! deep-cut ellipsoid method, which certifies its own optimality gap.

mod brute;
mod ellipsoid;

pub use brute::{brute_margin_2d, BruteResult, MarginProblem};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::perturbation::{lp_norm, lp_norm_subgrad_unchecked, penalty, penalty_value, Exponent, PerturbationModel};
use crate::vecops::{dot, norm2, normalized};

/// Iteration budget of the ellipsoid solver.
pub const SOLVER_BUDGET: u64 = 200_000;
/// Relative optimality gap at which the solver stops early.
const STOP_GAP: f64 = 1e-13;
/// Relative optimality gap below which a certificate counts as converged.
pub const CONVERGED_GAP: f64 = 1e-8;
/// Relative slack within which a sample is reported as active.
const ACTIVE_TOL: f64 = 1e-6;
/// Rotation used to probe for a flat optimum in two dimensions.
const FLATNESS_PROBE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginCertificate {
    /// Maximizer with `‖u‖_p = 1`.
    pub u: Vec<f64>,
    pub gamma: f64,
    pub q: Exponent,
    /// Samples attaining the margin (empty when not separable).
    pub active: Vec<usize>,
    /// Certified optimality gap.
    pub residual: f64,
    pub converged: bool,
    /// In two dimensions: a distinct direction attains the same margin.
    pub non_unique: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedMarginCertificate {
    /// Maximizer with `‖u‖₂ = 1`.
    pub u: Vec<f64>,
    pub gamma: f64,
    pub q: Exponent,
    pub c: f64,
    pub lambda: Option<f64>,
    pub active: Vec<usize>,
    pub residual: f64,
    pub converged: bool,
    pub non_unique: bool,
}

/// Uniform JSON shape for either certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub q: Exponent,
    pub c: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
    pub gamma: f64,
    pub u: Vec<f64>,
    pub active: Vec<usize>,
    pub residual: f64,
    pub converged: bool,
    pub non_unique: bool,
}

impl From<&MarginCertificate> for CertificateReport {
    fn from(c: &MarginCertificate) -> Self {
        Self {
            q: c.q,
            c: 0.0,
            lambda: None,
            gamma: c.gamma,
            u: c.u.clone(),
            active: c.active.clone(),
            residual: c.residual,
            converged: c.converged,
            non_unique: c.non_unique,
        }
    }
}

impl From<&MixedMarginCertificate> for CertificateReport {
    fn from(c: &MixedMarginCertificate) -> Self {
        Self {
            q: c.q,
            c: c.c,
            lambda: c.lambda,
            gamma: c.gamma,
            u: c.u.clone(),
            active: c.active.clone(),
            residual: c.residual,
            converged: c.converged,
            non_unique: c.non_unique,
        }
    }
}

/// Constants of the orthogonal-drift bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConstants {
    /// `α(S) = min_{ξ ⊥ u₂, ‖ξ‖₂ = 1} max_{i ∈ SV} ⟨ξ, z_i⟩`; absent when the
    /// support vectors do not span `R^d` or `d = 1`.
    pub alpha: Option<f64>,
    /// `K = (1 + ln n)/α + 20`; absent with `α` or when `α ≤ 0`.
    pub k: Option<f64>,
    pub sv_spans: bool,
    /// `α` is exact (`d = 2`) rather than a multi-start estimate, which can
    /// only overestimate the minimum.
    pub exact: bool,
}

fn min_margin(z: &[Vec<f64>], u: &[f64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (i, zi) in z.iter().enumerate() {
        let v = dot(zi, u);
        if v < best.0 {
            best = (v, i);
        }
    }
    best
}

fn active_set(values: impl Iterator<Item = f64>, gamma: f64) -> Vec<usize> {
    if gamma <= 0.0 {
        return Vec::new();
    }
    let tol = ACTIVE_TOL * gamma.abs().max(1.0);
    values
        .enumerate()
        .filter(|(_, v)| *v <= gamma + tol)
        .map(|(i, _)| i)
        .collect()
}

fn rotate(u: &[f64], angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    vec![c * u[0] - s * u[1], s * u[0] + c * u[1]]
}

/// Refine a two-dimensional maximizer by bisecting on the sign of the
/// angular derivative. Value comparisons alone cannot locate a smooth
/// maximum better than the square root of the value tolerance; the
/// derivative sign can.
fn polish_2d(
    u: &[f64],
    dir: &dyn Fn(f64) -> Vec<f64>,
    value: &dyn Fn(&[f64]) -> f64,
    slope: &dyn Fn(f64) -> f64,
) -> Option<Vec<f64>> {
    let phi0 = u[1].atan2(u[0]);
    let (mut a, mut b) = (phi0 - FLATNESS_PROBE, phi0 + FLATNESS_PROBE);
    if !(slope(a) > 0.0 && slope(b) < 0.0) {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if slope(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    let cand = dir(0.5 * (a + b));
    let (v0, v1) = (value(u), value(&cand));
    (v1 >= v0 - 1e-14 * v0.abs().max(1.0)).then_some(cand)
}

fn norm_constraint(p: f64) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
    move |x: &[f64]| lp_norm_subgrad_unchecked(x, p)
}

/// Solve `γ_q` and its ℓp-unit direction.
pub fn max_margin(ds: &LabeledDataset, q: Exponent) -> Result<MarginCertificate> {
    let z = ds.signed_points();
    let d = ds.d();
    let p = q.dual().value();
    let objective = |x: &[f64]| {
        let (v, i) = min_margin(&z, x);
        (v, z[i].clone())
    };
    let constraint = norm_constraint(p);
    let radius = (d as f64).powf((0.5 - 1.0 / p).max(0.0)) * 1.01;
    let sol = ellipsoid::maximize(
        &ellipsoid::Problem {
            dim: d,
            radius,
            objective: &objective,
            constraint: &constraint,
        },
        SOLVER_BUDGET,
        STOP_GAP,
    );
    let scale = lp_norm(&sol.x, p);
    let u = if scale > 0.0 {
        sol.x.iter().map(|v| v / scale).collect()
    } else {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        e
    };
    let u = if d == 2 && min_margin(&z, &u).0 > 0.0 {
        let dir = |phi: f64| {
            let v = [phi.cos(), phi.sin()];
            let n = lp_norm(&v, p);
            vec![v[0] / n, v[1] / n]
        };
        let slope = |phi: f64| {
            let (v, t) = ([phi.cos(), phi.sin()], [-phi.sin(), phi.cos()]);
            let (n, g) = lp_norm_subgrad_unchecked(&v, p);
            let (m, i) = min_margin(&z, &v);
            dot(&z[i], &t) * n - m * dot(&g, &t)
        };
        polish_2d(&u, &dir, &|x| min_margin(&z, x).0, &slope).unwrap_or(u)
    } else {
        u
    };
    let gamma = min_margin(&z, &u).0;
    let residual = (sol.upper - gamma).max(0.0);
    let non_unique = d == 2
        && gamma > 0.0
        && [FLATNESS_PROBE, -FLATNESS_PROBE].iter().any(|&a| {
            let r = rotate(&u, a);
            let n = lp_norm(&r, p);
            let v = min_margin(&z, &r.iter().map(|x| x / n).collect::<Vec<_>>()).0;
            v >= gamma - 1e-12 * gamma.abs().max(1.0)
        });
    Ok(MarginCertificate {
        active: active_set(z.iter().map(|zi| dot(zi, &u)), gamma),
        converged: residual <= CONVERGED_GAP * gamma.abs().max(1.0),
        u,
        gamma,
        q,
        residual,
        non_unique,
    })
}

/// Solve the robust margin `γ_{2,q}(c)` (or `γ_{2,λ}`) and its ℓ2-unit
/// direction. Requires `c < γ_q`: at or beyond that radius the perturbed
/// data is no longer separable and the adversarial risk has a finite
/// minimizer instead of a limiting direction.
pub fn robust_mixed_margin(ds: &LabeledDataset, model: &PerturbationModel) -> Result<MixedMarginCertificate> {
    let (q, c) = match model {
        PerturbationModel::Clean => (Exponent::TWO, 0.0),
        m => (m.q().expect("non-clean model has q"), m.c()),
    };
    if let PerturbationModel::LqBall { .. } = model {
        let gq = max_margin(ds, q)?.gamma;
        if c >= gq {
            return Err(Error::Precondition(format!(
                "perturbation radius c = {c} is not below the ℓ{q} margin γ = {gq}; \
                 the adversarial risk then has a finite minimizer and no robust margin direction"
            )));
        }
    }
    let z = ds.signed_points();
    let d = ds.d();
    let objective = |x: &[f64]| {
        let (v, i) = min_margin(&z, x);
        let (pv, pg) = penalty(model, x);
        (v - pv, z[i].iter().zip(&pg).map(|(a, b)| a - b).collect())
    };
    let constraint = norm_constraint(2.0);
    let sol = ellipsoid::maximize(
        &ellipsoid::Problem {
            dim: d,
            radius: 1.01,
            objective: &objective,
            constraint: &constraint,
        },
        SOLVER_BUDGET,
        STOP_GAP,
    );
    let u = normalized(&sol.x).unwrap_or_else(|| {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        e
    });
    let value = |x: &[f64]| min_margin(&z, x).0 - penalty_value(model, x);
    let u = if d == 2 && value(&u) > 0.0 {
        let dir = |phi: f64| vec![phi.cos(), phi.sin()];
        let slope = |phi: f64| {
            let (v, t) = ([phi.cos(), phi.sin()], [-phi.sin(), phi.cos()]);
            let (_, i) = min_margin(&z, &v);
            let (_, pg) = penalty(model, &v);
            dot(&z[i], &t) - dot(&pg, &t)
        };
        polish_2d(&u, &dir, &value, &slope).unwrap_or(u)
    } else {
        u
    };
    let pen_u = penalty_value(model, &u);
    let gamma = min_margin(&z, &u).0 - pen_u;
    if gamma <= 0.0 {
        return Err(Error::Precondition(format!(
            "robust margin {gamma} is not positive for {}; the radius is too large",
            model.label()
        )));
    }
    let residual = (sol.upper - gamma).max(0.0);
    let non_unique = d == 2
        && [FLATNESS_PROBE, -FLATNESS_PROBE].iter().any(|&a| {
            let r = rotate(&u, a);
            let v = min_margin(&z, &r).0 - penalty_value(model, &r);
            v >= gamma - 1e-12 * gamma.abs().max(1.0)
        });
    Ok(MixedMarginCertificate {
        active: active_set(z.iter().map(|zi| dot(zi, &u) - pen_u), gamma),
        converged: residual <= CONVERGED_GAP * gamma.abs().max(1.0),
        u,
        gamma,
        q,
        c,
        lambda: model.lambda(),
        residual,
        non_unique,
    })
}

/// Indices `i` with `z_iᵀu ≤ γ + tol`.
pub fn support_vectors(ds: &LabeledDataset, cert: &MarginCertificate, tol: f64) -> Vec<usize> {
    (0..ds.n())
        .filter(|&i| ds.signed_margin(i, &cert.u) <= cert.gamma + tol)
        .collect()
}

/// Rank of a set of vectors by Gram–Schmidt at relative tolerance `tol`.
fn rank(vectors: &[Vec<f64>], tol: f64) -> usize {
    let scale = vectors.iter().map(|v| norm2(v)).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0;
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut r = v.clone();
        for b in &basis {
            let a = dot(&r, b);
            r.iter_mut().zip(b).for_each(|(ri, bi)| *ri -= a * bi);
        }
        let n = norm2(&r);
        if n > tol * scale {
            basis.push(r.iter().map(|x| x / n).collect());
        }
    }
    basis.len()
}

/// `α(S)` and `K` from an ℓ2 max-margin certificate.
pub fn alpha_and_k(ds: &LabeledDataset, cert: &MarginCertificate) -> Result<DiagnosticsConstants> {
    if cert.q != Exponent::TWO {
        return Err(Error::Precondition(format!(
            "α(S) is defined from the ℓ2 max-margin direction, got q = {}",
            cert.q
        )));
    }
    let d = ds.d();
    let sv: Vec<Vec<f64>> = support_vectors(ds, cert, ACTIVE_TOL * cert.gamma.abs().max(1.0))
        .into_iter()
        .map(|i| ds.signed_point(i))
        .collect();
    let sv_spans = rank(&sv, 1e-10) == d;
    if !sv_spans || d == 1 {
        return Ok(DiagnosticsConstants {
            alpha: None,
            k: None,
            sv_spans,
            exact: d == 1,
        });
    }
    let u = &cert.u;
    let phi = |xi: &[f64]| sv.iter().map(|z| dot(z, xi)).fold(f64::NEG_INFINITY, f64::max);
    let (alpha, exact) = if d == 2 {
        let xi = [-u[1], u[0]];
        let neg = [u[1], -u[0]];
        (phi(&xi).min(phi(&neg)), true)
    } else {
        (alpha_multistart(&sv, u, d), false)
    };
    let n = ds.n() as f64;
    Ok(DiagnosticsConstants {
        alpha: Some(alpha),
        k: (alpha > 0.0).then(|| (1.0 + n.ln()) / alpha + 20.0),
        sv_spans,
        exact,
    })
}

/// Minimize `max_i ⟨ξ, z_i⟩` over unit `ξ ⊥ u` from 32 seeded starts by
/// projected subgradient descent; the best value found.
fn alpha_multistart(sv: &[Vec<f64>], u: &[f64], d: usize) -> f64 {
    let project = |v: &mut Vec<f64>| {
        let a = dot(v, u);
        v.iter_mut().zip(u).for_each(|(vi, ui)| *vi -= a * ui);
    };
    let phi = |xi: &[f64]| -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, z) in sv.iter().enumerate() {
            let v = dot(z, xi);
            if v > best.0 {
                best = (v, i);
            }
        }
        best
    };
    let mut best = f64::INFINITY;
    for seed in 0..32u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        project(&mut xi);
        let Some(mut xi_n) = normalized(&xi) else { continue };
        for k in 0..4000 {
            let (v, i) = phi(&xi_n);
            best = best.min(v);
            let step = 0.5 / (1.0 + k as f64).sqrt();
            let mut next: Vec<f64> = xi_n.iter().zip(&sv[i]).map(|(x, z)| x - step * z).collect();
            project(&mut next);
            match normalized(&next) {
                Some(n) => xi_n = n,
                None => break,
            }
        }
        best = best.min(phi(&xi_n).0);
    }
    best
}

/// All margin quantities a training run may need, solved once up front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    /// ℓ2 max margin `γ₂, u₂`.
    pub l2: MarginCertificate,
    /// ℓq max margin for the model's `q` (absent for the clean model).
    pub lq: Option<MarginCertificate>,
    /// Robust margin for the model (absent when `c ≥ γ_q`).
    pub mixed: Option<MixedMarginCertificate>,
    /// For the smoothed model: the exact ℓ∞ robust margin at the same `c`.
    pub mixed_exact_linf: Option<MixedMarginCertificate>,
    pub constants: DiagnosticsConstants,
}

impl Certificates {
    pub fn compute(ds: &LabeledDataset, model: &PerturbationModel) -> Result<Self> {
        let l2 = max_margin(ds, Exponent::TWO)?;
        let lq = match model.q() {
            Some(q) if q == Exponent::TWO => Some(l2.clone()),
            Some(q) => Some(max_margin(ds, q)?),
            None => None,
        };
        let separable = l2.gamma > crate::dataset::SEPARABILITY_TOL;
        let mixed = if separable {
            match robust_mixed_margin(ds, model) {
                Ok(m) => Some(m),
                Err(Error::Precondition(_)) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let mixed_exact_linf = match model {
            PerturbationModel::SmoothedLinf { c, .. } if separable => {
                match robust_mixed_margin(ds, &PerturbationModel::lq(Exponent::INF, *c)?) {
                    Ok(m) => Some(m),
                    Err(Error::Precondition(_)) => None,
                    Err(e) => return Err(e),
                }
            }
            _ => None,
        };
        let constants = alpha_and_k(ds, &l2)?;
        Ok(Self {
            l2,
            lq,
            mixed,
            mixed_exact_linf,
            constants,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{builtin, generate_separable};

    #[test]
    fn four_point_l2() {
        let ds = builtin("paper-4pt").unwrap();
        let c = max_margin(&ds, Exponent::TWO).unwrap();
        assert!((c.gamma - 1.0).abs() < 1e-9, "{c:?}");
        assert!(c.u[0].abs() < 1e-8 && (c.u[1] - 1.0).abs() < 1e-8);
        assert!(c.converged);
        assert_eq!(c.active, vec![0, 1, 2, 3]);
        assert!(c.residual >= 0.0 && c.residual < 1e-8);
    }

    #[test]
    fn counterexample_values() {
        let ds = builtin("paper-counterexample").unwrap();
        let c = max_margin(&ds, Exponent::INF).unwrap();
        assert!((c.gamma - 10.0).abs() < 1e-8);
        assert!((c.u[0] - 1.0).abs() < 1e-8 && c.u[1].abs() < 1e-8);
        let c = max_margin(&ds, Exponent::TWO).unwrap();
        assert!((c.gamma - 101f64.sqrt()).abs() < 1e-8);
        let s = 101f64.sqrt();
        assert!((c.u[0] - 10.0 / s).abs() < 1e-12 && (c.u[1] - 1.0 / s).abs() < 1e-12);
    }

    #[test]
    fn counterexample_robust_linf() {
        let ds = builtin("paper-counterexample").unwrap();
        let m = robust_mixed_margin(&ds, &PerturbationModel::lq(Exponent::INF, 0.5).unwrap()).unwrap();
        let s = 362f64.sqrt();
        assert!((m.gamma - 181.0 / s).abs() < 1e-8, "{m:?}");
        assert!((m.u[0] - 19.0 / s).abs() < 1e-6 && (m.u[1] - 1.0 / s).abs() < 1e-6);
    }

    #[test]
    fn robust_l2_identity_and_zero_radius() {
        let ds = builtin("paper-4pt").unwrap();
        let m = robust_mixed_margin(&ds, &PerturbationModel::lq(Exponent::TWO, 0.5).unwrap()).unwrap();
        assert!((m.gamma - 0.5).abs() < 1e-8);
        assert!(m.u[0].abs() < 1e-6 && (m.u[1] - 1.0).abs() < 1e-6);
        let m0 = robust_mixed_margin(&ds, &PerturbationModel::lq(Exponent::INF, 0.0).unwrap()).unwrap();
        assert!((m0.gamma - 1.0).abs() < 1e-8);
    }

    #[test]
    fn robust_rejects_large_radius() {
        let ds = builtin("paper-4pt").unwrap();
        let e = robust_mixed_margin(&ds, &PerturbationModel::lq(Exponent::TWO, 1.0).unwrap());
        assert!(matches!(e, Err(Error::Precondition(_))));
    }

    #[test]
    fn support_vector_examples() {
        let ds = builtin("paper-4pt").unwrap();
        let c = max_margin(&ds, Exponent::TWO).unwrap();
        assert_eq!(support_vectors(&ds, &c, 1e-6), vec![0, 1, 2, 3]);
        let ds = LabeledDataset::new("t", vec![vec![1.0, 0.0], vec![3.0, 0.5]], vec![1.0, 1.0]).unwrap();
        let c = max_margin(&ds, Exponent::TWO).unwrap();
        assert_eq!(support_vectors(&ds, &c, 1e-6), vec![0]);
    }

    #[test]
    fn alpha_examples() {
        let ds = builtin("paper-4pt").unwrap();
        let k = alpha_and_k(&ds, &max_margin(&ds, Exponent::TWO).unwrap()).unwrap();
        assert!((k.alpha.unwrap() - 0.5).abs() < 1e-7);
        assert!((k.k.unwrap() - ((1.0 + 4f64.ln()) / 0.5 + 20.0)).abs() < 1e-5);
        assert!(k.sv_spans && k.exact);
        let ds = builtin("paper-counterexample").unwrap();
        let k = alpha_and_k(&ds, &max_margin(&ds, Exponent::TWO).unwrap()).unwrap();
        assert!(!k.sv_spans && k.alpha.is_none() && k.k.is_none());
        let ds = LabeledDataset::new("t", vec![vec![2.0], vec![-1.0]], vec![1.0, -1.0]).unwrap();
        let k = alpha_and_k(&ds, &max_margin(&ds, Exponent::TWO).unwrap()).unwrap();
        assert!(k.alpha.is_none() && k.k.is_none());
    }

    #[test]
    fn one_dimensional_margin() {
        let ds = LabeledDataset::new("t", vec![vec![2.0], vec![-1.0]], vec![1.0, -1.0]).unwrap();
        let c = max_margin(&ds, Exponent::TWO).unwrap();
        assert!((c.gamma - 1.0).abs() < 1e-12 && (c.u[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generated_higher_dimension() {
        let ds = generate_separable(7, 50, 5, 0.05).unwrap();
        let c = max_margin(&ds, Exponent::TWO).unwrap();
        assert!(c.gamma >= 0.05 - 1e-9, "{}", c.gamma);
        assert!(c.converged, "{c:?}");
        assert!((norm2(&c.u) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn non_separable_reports_nonpositive() {
        let ds = LabeledDataset::new("t", vec![vec![1.0, 2.0], vec![1.0, 2.0]], vec![1.0, -1.0]).unwrap();
        let c = max_margin(&ds, Exponent::TWO).unwrap();
        assert!(c.gamma <= 1e-8);
        assert!(c.active.is_empty());
    }
}
