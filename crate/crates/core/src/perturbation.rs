//! The adversary: ℓq-ball perturbations, their dual-norm penalty form, and the
//! smoothed-ℓ∞ surrogate.
//!
//! For a perturbation set `{δ : ‖δ‖_q ≤ c}` the worst case against a linear
//! classifier `θ` shifts every margin by `-c‖θ‖_p` with `1/p + 1/q = 1`, so
//! the adversarial loss can be written as a penalty on `θ` alone.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::vecops::norm2;

/// A norm exponent in `[1, ∞]`. `∞` is stored as `f64::INFINITY` and
/// serialized as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Exponent(f64);

impl Exponent {
    pub const ONE: Exponent = Exponent(1.0);
    pub const TWO: Exponent = Exponent(2.0);
    pub const INF: Exponent = Exponent(f64::INFINITY);

    pub fn new(v: f64) -> Result<Self> {
        if v.is_nan() || v < 1.0 {
            return Err(Error::Domain(format!("norm exponent {v} is below 1")));
        }
        Ok(Exponent(v))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_inf(self) -> bool {
        self.0.is_infinite()
    }

    /// The conjugate exponent.
    pub fn dual(self) -> Exponent {
        Exponent(dual_exponent(self.0).expect("exponent invariant holds"))
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_inf() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_inf() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let v = match Raw::deserialize(d)? {
            Raw::Num(v) => v,
            Raw::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "∞" => f64::INFINITY,
                other => other
                    .parse::<f64>()
                    .map_err(|_| serde::de::Error::custom(format!("`{s}` is not an exponent")))?,
            },
        };
        Exponent::new(v).map_err(serde::de::Error::custom)
    }
}

/// `p` with `1/p + 1/q = 1`, using `1/∞ = 0`.
pub fn dual_exponent(q: f64) -> Result<f64> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::Domain(format!("norm exponent {q} is below 1")));
    }
    Ok(if q == 1.0 {
        f64::INFINITY
    } else if q.is_infinite() {
        1.0
    } else {
        q / (q - 1.0)
    })
}

/// `‖θ‖_p` and a subgradient of it.
///
/// At the origin the zero vector is returned for every `p`; ties for the
/// largest coordinate (`p = ∞`) go to the lowest index.
pub fn lp_norm_and_subgradient(theta: &[f64], p: f64) -> Result<(f64, Vec<f64>)> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::Domain(format!("norm exponent {p} is below 1")));
    }
    Ok(lp_norm_subgrad_unchecked(theta, p))
}

pub(crate) fn lp_norm_subgrad_unchecked(theta: &[f64], p: f64) -> (f64, Vec<f64>) {
    let d = theta.len();
    let mut g = vec![0.0; d];
    if p == 1.0 {
        let mut s = 0.0;
        for (gj, &t) in g.iter_mut().zip(theta) {
            s += t.abs();
            *gj = sign0(t);
        }
        return (s, g);
    }
    if p.is_infinite() {
        let mut best = 0usize;
        let mut m = 0.0f64;
        for (j, &t) in theta.iter().enumerate() {
            if t.abs() > m {
                m = t.abs();
                best = j;
            }
        }
        if m > 0.0 {
            g[best] = sign0(theta[best]);
        }
        return (m, g);
    }
    let v = lp_norm(theta, p);
    if v == 0.0 {
        return (0.0, g);
    }
    if p == 2.0 {
        for (gj, &t) in g.iter_mut().zip(theta) {
            *gj = t / v;
        }
        return (v, g);
    }
    // |θ_j|^{p-1} / ‖θ‖_p^{p-1} evaluated as exp((p-1)(ln|θ_j| - ln‖θ‖_p)).
    let ln_v = v.ln();
    for (gj, &t) in g.iter_mut().zip(theta) {
        if t != 0.0 {
            *gj = t.signum() * ((p - 1.0) * (t.abs().ln() - ln_v)).exp();
        }
    }
    (v, g)
}

/// `‖θ‖_p`, scaled to avoid overflow for large `p`.
pub fn lp_norm(theta: &[f64], p: f64) -> f64 {
    if p == 1.0 {
        return theta.iter().map(|t| t.abs()).sum();
    }
    if p == 2.0 {
        return norm2(theta);
    }
    let m = theta.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if p.is_infinite() || m == 0.0 || !m.is_finite() {
        return m;
    }
    let s: f64 = theta.iter().map(|t| (t.abs() / m).powf(p)).sum();
    m * s.powf(1.0 / p)
}

fn sign0(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Description of the adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", try_from = "RawModel", into = "RawModel")]
pub enum PerturbationModel {
    /// `{δ : ‖δ‖_q ≤ c}`.
    LqBall { q: Exponent, c: f64 },
    /// ℓ∞ perturbation whose dual ℓ1 penalty is replaced by
    /// `H_λ(θ) = Σ_j √(θ_j² + λ)`.
    SmoothedLinf { c: f64, lambda: f64 },
    /// No adversary.
    Clean,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
enum RawModel {
    #[serde(rename = "lq")]
    Lq { q: Exponent, c: f64 },
    #[serde(rename = "smoothed-linf")]
    Smoothed { c: f64, lambda: f64 },
    #[serde(rename = "clean")]
    Clean,
}

impl TryFrom<RawModel> for PerturbationModel {
    type Error = Error;
    fn try_from(r: RawModel) -> Result<Self> {
        match r {
            RawModel::Lq { q, c } => PerturbationModel::lq(q, c),
            RawModel::Smoothed { c, lambda } => PerturbationModel::smoothed_linf(c, lambda),
            RawModel::Clean => Ok(PerturbationModel::Clean),
        }
    }
}

impl From<PerturbationModel> for RawModel {
    fn from(m: PerturbationModel) -> Self {
        match m {
            PerturbationModel::LqBall { q, c } => RawModel::Lq { q, c },
            PerturbationModel::SmoothedLinf { c, lambda } => RawModel::Smoothed { c, lambda },
            PerturbationModel::Clean => RawModel::Clean,
        }
    }
}

fn check_radius(c: f64) -> Result<()> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::Domain(format!("perturbation radius {c} must be finite and >= 0")));
    }
    Ok(())
}

impl PerturbationModel {
    pub fn lq(q: Exponent, c: f64) -> Result<Self> {
        check_radius(c)?;
        Ok(PerturbationModel::LqBall { q, c })
    }

    pub fn smoothed_linf(c: f64, lambda: f64) -> Result<Self> {
        check_radius(c)?;
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Domain(format!("smoothing parameter {lambda} must be > 0")));
        }
        Ok(PerturbationModel::SmoothedLinf { c, lambda })
    }

    pub fn c(&self) -> f64 {
        match *self {
            PerturbationModel::LqBall { c, .. } | PerturbationModel::SmoothedLinf { c, .. } => c,
            PerturbationModel::Clean => 0.0,
        }
    }

    /// Same kind of adversary with a different radius.
    pub fn with_c(&self, c: f64) -> Result<Self> {
        match *self {
            PerturbationModel::LqBall { q, .. } => Self::lq(q, c),
            PerturbationModel::SmoothedLinf { lambda, .. } => Self::smoothed_linf(c, lambda),
            PerturbationModel::Clean => Ok(PerturbationModel::Clean),
        }
    }

    /// The perturbation norm `q`; the smoothed model approximates `q = ∞`.
    /// `None` for the clean model.
    pub fn q(&self) -> Option<Exponent> {
        match *self {
            PerturbationModel::LqBall { q, .. } => Some(q),
            PerturbationModel::SmoothedLinf { .. } => Some(Exponent::INF),
            PerturbationModel::Clean => None,
        }
    }

    /// Conjugate exponent of `q` (the norm penalized on `θ`).
    pub fn p(&self) -> Option<Exponent> {
        self.q().map(Exponent::dual)
    }

    pub fn lambda(&self) -> Option<f64> {
        match *self {
            PerturbationModel::SmoothedLinf { lambda, .. } => Some(lambda),
            _ => None,
        }
    }

    /// True when the adversary has no effect (clean model or zero radius).
    pub fn is_clean(&self) -> bool {
        match self {
            PerturbationModel::Clean => true,
            PerturbationModel::LqBall { c, .. } => *c == 0.0,
            PerturbationModel::SmoothedLinf { .. } => false,
        }
    }

    /// Short human-readable tag, e.g. `lq(q=2,c=0.5)`.
    pub fn label(&self) -> String {
        match self {
            PerturbationModel::LqBall { q, c } => format!("lq(q={q},c={c})"),
            PerturbationModel::SmoothedLinf { c, lambda } => {
                format!("smoothed-linf(c={c},lambda={lambda})")
            }
            PerturbationModel::Clean => "clean".into(),
        }
    }
}

/// The maximizing perturbation `δ = c·y·argmin_{‖δ‖_q ≤ 1} ⟨δ, θ⟩`, which
/// equals `-c·y·∂‖θ‖_p`. Zero at `θ = 0`.
pub fn worst_case_perturbation(model: &PerturbationModel, theta: &[f64], y: f64) -> Result<Vec<f64>> {
    match *model {
        PerturbationModel::LqBall { q, c } => {
            let (_, g) = lp_norm_subgrad_unchecked(theta, q.dual().value());
            Ok(g.into_iter().map(|gj| -c * y * gj).collect())
        }
        PerturbationModel::Clean => Ok(vec![0.0; theta.len()]),
        PerturbationModel::SmoothedLinf { .. } => Err(Error::Unsupported(
            "the smoothed-ℓ∞ adversary is only available through its penalty form".into(),
        )),
    }
}

/// The penalty `pen(θ)` such that the worst-case loss on sample `i` is
/// `exp(-z_iᵀθ + pen(θ))`, together with a subgradient.
pub fn penalty(model: &PerturbationModel, theta: &[f64]) -> (f64, Vec<f64>) {
    match *model {
        PerturbationModel::LqBall { q, c } => {
            if c == 0.0 {
                return (0.0, vec![0.0; theta.len()]);
            }
            let (v, mut g) = lp_norm_subgrad_unchecked(theta, q.dual().value());
            g.iter_mut().for_each(|gj| *gj *= c);
            (c * v, g)
        }
        PerturbationModel::SmoothedLinf { c, lambda } => {
            let mut v = 0.0;
            let mut g = Vec::with_capacity(theta.len());
            for &t in theta {
                let h = (t * t + lambda).sqrt();
                v += h;
                g.push(c * t / h);
            }
            (c * v, g)
        }
        PerturbationModel::Clean => (0.0, vec![0.0; theta.len()]),
    }
}

/// Penalty value only.
pub fn penalty_value(model: &PerturbationModel, theta: &[f64]) -> f64 {
    match *model {
        PerturbationModel::LqBall { q, c } => {
            if c == 0.0 {
                0.0
            } else {
                c * lp_norm(theta, q.dual().value())
            }
        }
        PerturbationModel::SmoothedLinf { c, lambda } => {
            c * theta.iter().map(|t| (t * t + lambda).sqrt()).sum::<f64>()
        }
        PerturbationModel::Clean => 0.0,
    }
}

/// `H_λ(θ) = Σ_j √(θ_j² + λ)` and its gradient.
pub fn smoothed_l1(theta: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    penalty(&PerturbationModel::SmoothedLinf { c: 1.0, lambda }, theta)
}

/// Euclidean projection of `v` onto `{x : ‖x‖_q ≤ radius}`.
pub fn project_lq_ball(v: &[f64], q: Exponent, radius: f64) -> Vec<f64> {
    let q = q.value();
    if radius <= 0.0 {
        return vec![0.0; v.len()];
    }
    if lp_norm(v, q) <= radius {
        return v.to_vec();
    }
    if q == 2.0 {
        let n = norm2(v);
        return v.iter().map(|x| x * radius / n).collect();
    }
    if q.is_infinite() {
        return v.iter().map(|x| x.clamp(-radius, radius)).collect();
    }
    if q == 1.0 {
        let a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        let w = project_simplex(&a, radius);
        return w.iter().zip(v).map(|(wj, x)| wj * x.signum()).collect();
    }
    // General q: x_j = sign(v_j)·radius·w_j(ν), where w_j ∈ [0, 1] solves
    // radius·w + ν w^{q-1} = |v_j| and ν ≥ 0 is chosen so that ‖w‖_q = 1.
    // Working with w instead of x keeps every power in [0, 1], so large q
    // cannot overflow. At the solution the largest w_j is at least d^{-1/q},
    // which bounds ν by max|v_j|·d. Both equations are monotone, so nested
    // bisection is reliable.
    let a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let shrink = |nu: f64| -> Vec<f64> {
        a.iter()
            .map(|&aj| {
                if aj == 0.0 {
                    return 0.0;
                }
                let (mut lo, mut hi) = (0.0, (aj / radius).min(1.0));
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if radius * mid + nu * mid.powf(q - 1.0) > aj {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                    if hi - lo <= f64::EPSILON * hi {
                        break;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect()
    };
    let a_max = a.iter().fold(0.0f64, |m, x| m.max(*x));
    let mut hi = 2.0 * a_max * v.len() as f64 + 1.0;
    while lp_norm(&shrink(hi), q) > 1.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lp_norm(&shrink(mid), q) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let w = shrink(hi);
    w.iter().zip(v).map(|(wj, x)| radius * wj * x.signum()).collect()
}

/// Euclidean projection of a nonnegative vector onto
/// `{w ≥ 0 : Σ w = radius}` by the sorted-threshold rule.
pub(crate) fn project_simplex(a: &[f64], radius: f64) -> Vec<f64> {
    let mut s = a.to_vec();
    s.sort_by(|x, y| y.partial_cmp(x).expect("finite input"));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &sk) in s.iter().enumerate() {
        cum += sk;
        let t = (cum - radius) / (k + 1) as f64;
        if sk - t > 0.0 {
            tau = t;
        }
    }
    a.iter().map(|x| (x - tau).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecops::dot;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn dual_exponent_examples() {
        assert_eq!(dual_exponent(2.0).unwrap(), 2.0);
        assert_eq!(dual_exponent(f64::INFINITY).unwrap(), 1.0);
        assert_eq!(dual_exponent(1.0).unwrap(), f64::INFINITY);
        assert!(close(dual_exponent(3.0).unwrap(), 1.5, 1e-15));
        assert!(matches!(dual_exponent(0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn dual_exponent_round_trip() {
        for q in [1.0, 1.5, 2.0, 3.0, 1000.0, f64::INFINITY] {
            let back = dual_exponent(dual_exponent(q).unwrap()).unwrap();
            assert!(back == q || close(back, q, 1e-12), "{q} -> {back}");
        }
    }

    #[test]
    fn subgradient_examples() {
        let (v, g) = lp_norm_and_subgradient(&[3.0, 4.0], 2.0).unwrap();
        assert_eq!(v, 5.0);
        assert!(close(g[0], 0.6, 1e-15) && close(g[1], 0.8, 1e-15));
        let (v, g) = lp_norm_and_subgradient(&[1.0, -2.0], 1.0).unwrap();
        assert_eq!((v, g), (3.0, vec![1.0, -1.0]));
        let (v, g) = lp_norm_and_subgradient(&[1.0, 1.0], 1.5).unwrap();
        assert!(close(v, 2f64.powf(2.0 / 3.0), 1e-14));
        for gj in &g {
            assert!(close(*gj, 2f64.powf(-1.0 / 3.0), 1e-14));
        }
        assert!(close(dot(&g, &[1.0, 1.0]), v, 1e-14));
        assert!(close(lp_norm(&g, 3.0), 1.0, 1e-14));
        assert!(lp_norm_and_subgradient(&[1.0], 0.9).is_err());
    }

    #[test]
    fn subgradient_at_origin_is_zero() {
        for p in [1.0, 1.5, 2.0, f64::INFINITY] {
            let (v, g) = lp_norm_and_subgradient(&[0.0, 0.0, 0.0], p).unwrap();
            assert_eq!(v, 0.0);
            assert_eq!(g, vec![0.0; 3]);
        }
    }

    #[test]
    fn linf_subgradient_lowest_index_tie() {
        let (v, g) = lp_norm_and_subgradient(&[-2.0, 2.0, 1.0], f64::INFINITY).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(g, vec![-1.0, 0.0, 0.0]);
    }

    #[test]
    fn worst_case_examples() {
        let m = PerturbationModel::lq(Exponent::TWO, 1.0).unwrap();
        let d = worst_case_perturbation(&m, &[3.0, 4.0], 1.0).unwrap();
        assert!(close(d[0], -0.6, 1e-15) && close(d[1], -0.8, 1e-15));
        let m = PerturbationModel::lq(Exponent::INF, 0.5).unwrap();
        assert_eq!(worst_case_perturbation(&m, &[10.0, -2.0], 1.0).unwrap(), vec![-0.5, 0.5]);
        let m = PerturbationModel::lq(Exponent::new(3.0).unwrap(), 1.0).unwrap();
        let d = worst_case_perturbation(&m, &[1.0, 1.0], 1.0).unwrap();
        for dj in &d {
            assert!(close(*dj, -(2f64.powf(-1.0 / 3.0)), 1e-14));
        }
        assert!(close(lp_norm(&d, 3.0), 1.0, 1e-14));
        let m = PerturbationModel::lq(Exponent::ONE, 2.0).unwrap();
        assert_eq!(worst_case_perturbation(&m, &[1.0, -3.0], -1.0).unwrap(), vec![0.0, -2.0]);
    }

    #[test]
    fn worst_case_rejects_smoothed_and_handles_origin() {
        let s = PerturbationModel::smoothed_linf(0.5, 1e-4).unwrap();
        assert!(matches!(worst_case_perturbation(&s, &[1.0], 1.0), Err(Error::Unsupported(_))));
        let m = PerturbationModel::lq(Exponent::TWO, 1.0).unwrap();
        assert_eq!(worst_case_perturbation(&m, &[0.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn penalty_examples() {
        let s = PerturbationModel::smoothed_linf(1.0, 1.0).unwrap();
        assert_eq!(penalty(&s, &[0.0, 0.0]), (2.0, vec![0.0, 0.0]));
        let m = PerturbationModel::lq(Exponent::INF, 2.0).unwrap();
        assert_eq!(penalty(&m, &[1.0, -3.0]), (8.0, vec![2.0, -2.0]));
        let s = PerturbationModel::smoothed_linf(1.0, 1e-6).unwrap();
        let (v, _) = penalty(&s, &[1.0, -3.0]);
        assert!(v >= 4.0 && v - 4.0 <= 2e-3);
        assert_eq!(penalty(&PerturbationModel::Clean, &[1.0]), (0.0, vec![0.0]));
    }

    #[test]
    fn model_json_forms() {
        let m: PerturbationModel = serde_json::from_str(r#"{"kind":"lq","q":2.0,"c":0.5}"#).unwrap();
        assert_eq!(m, PerturbationModel::lq(Exponent::TWO, 0.5).unwrap());
        let m: PerturbationModel = serde_json::from_str(r#"{"kind":"lq","q":"inf","c":0.5}"#).unwrap();
        assert_eq!(m.q(), Some(Exponent::INF));
        assert_eq!(m.p(), Some(Exponent::ONE));
        let m: PerturbationModel =
            serde_json::from_str(r#"{"kind":"smoothed-linf","c":0.5,"lambda":1e-4}"#).unwrap();
        assert_eq!(m.lambda(), Some(1e-4));
        let m: PerturbationModel = serde_json::from_str(r#"{"kind":"clean"}"#).unwrap();
        assert_eq!(m, PerturbationModel::Clean);
        let back = serde_json::to_string(&PerturbationModel::lq(Exponent::INF, 0.5).unwrap()).unwrap();
        assert_eq!(back, r#"{"kind":"lq","q":"inf","c":0.5}"#);
        assert!(serde_json::from_str::<PerturbationModel>(r#"{"kind":"lq","q":0.5,"c":0.5}"#).is_err());
        assert!(serde_json::from_str::<PerturbationModel>(r#"{"kind":"lq","q":2,"c":-1}"#).is_err());
        assert!(
            serde_json::from_str::<PerturbationModel>(r#"{"kind":"smoothed-linf","c":1,"lambda":0}"#)
                .is_err()
        );
    }

    #[test]
    fn projections_land_on_ball() {
        let v = [3.0, -1.0, 0.5];
        for q in [1.0, 1.5, 2.0, 3.0, f64::INFINITY] {
            let q = Exponent::new(q).unwrap();
            let x = project_lq_ball(&v, q, 1.0);
            assert!(close(lp_norm(&x, q.value()), 1.0, 1e-9), "q={q}");
            // optimality: v - x lies in the normal cone, i.e. is aligned with
            // the dual-norm subgradient at x
            let r: Vec<f64> = v.iter().zip(&x).map(|(a, b)| a - b).collect();
            let dual = dual_exponent(q.value()).unwrap();
            assert!(close(dot(&r, &x), lp_norm(&r, dual), 1e-7), "q={q}");
        }
        assert_eq!(project_lq_ball(&[0.1, 0.2], Exponent::TWO, 1.0), vec![0.1, 0.2]);
    }
}
