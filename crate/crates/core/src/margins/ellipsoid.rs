//! Deep-cut ellipsoid method for maximizing a concave function over a
//! convex norm ball.
//!
//! Each objective cut yields the certified upper bound
//! `f(x_k) + √(s_kᵀ P_k s_k)` on the optimum (the maximum of the supporting
//! hyperplane over the current ellipsoid, which still contains every
//! maximizer), so the reported residual is a true optimality gap rather
//! than a heuristic.

use crate::vecops::dot;

/// A function returning its value and a (sub/super)gradient.
pub(crate) type Oracle<'a> = &'a dyn Fn(&[f64]) -> (f64, Vec<f64>);

pub(crate) struct Problem<'a> {
    pub dim: usize,
    /// Radius of a Euclidean ball containing the feasible set.
    pub radius: f64,
    /// Concave objective: value and a supergradient.
    pub objective: Oracle<'a>,
    /// Convex constraint function (feasible iff value ≤ 1): value and a
    /// subgradient.
    pub constraint: Oracle<'a>,
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub x: Vec<f64>,
    pub value: f64,
    pub upper: f64,
    pub iterations: u64,
}

#[cfg(test)]
impl Solution {
    pub fn gap(&self) -> f64 {
        (self.upper - self.value).max(0.0)
    }
}

pub(crate) fn maximize(pb: &Problem<'_>, max_iter: u64, rel_tol: f64) -> Solution {
    if pb.dim == 1 {
        return maximize_interval(pb);
    }
    let d = pb.dim;
    let df = d as f64;
    let mut x = vec![0.0; d];
    let mut p = vec![0.0; d * d];
    for j in 0..d {
        p[j * d + j] = pb.radius * pb.radius;
    }
    let (f0, _) = (pb.objective)(&x);
    let mut best = Solution {
        x: x.clone(),
        value: f0,
        upper: f64::INFINITY,
        iterations: 0,
    };
    let mut pg = vec![0.0; d];
    for k in 0..max_iter {
        best.iterations = k + 1;
        let (nv, ng) = (pb.constraint)(&x);
        let (g, h) = if nv > 1.0 {
            (ng, nv - 1.0)
        } else {
            let (fv, s) = (pb.objective)(&x);
            if fv > best.value {
                best.value = fv;
                best.x.clone_from(&x);
            }
            let sps = quad(&p, &s, d);
            best.upper = best.upper.min(fv + sps.max(0.0).sqrt());
            if sps <= 0.0 {
                break;
            }
            (s.iter().map(|v| -v).collect(), best.value - fv)
        };
        if best.upper - best.value <= rel_tol * best.value.abs().max(1.0) {
            break;
        }
        for i in 0..d {
            pg[i] = dot(&p[i * d..(i + 1) * d], &g);
        }
        let gpg = dot(&g, &pg);
        if !(gpg > 0.0 && gpg.is_finite()) {
            break;
        }
        let sq = gpg.sqrt();
        let alpha = h / sq;
        if alpha >= 1.0 {
            // numerically empty ellipsoid
            break;
        }
        let step = (1.0 + df * alpha) / (df + 1.0);
        for i in 0..d {
            x[i] -= step * pg[i] / sq;
        }
        let shrink = df * df / (df * df - 1.0) * (1.0 - alpha * alpha);
        let beta = 2.0 * (1.0 + df * alpha) / ((df + 1.0) * (1.0 + alpha));
        for i in 0..d {
            for j in 0..=i {
                let v = shrink * (p[i * d + j] - beta * pg[i] * pg[j] / gpg);
                p[i * d + j] = v;
                p[j * d + i] = v;
            }
        }
    }
    best
}

fn quad(p: &[f64], s: &[f64], d: usize) -> f64 {
    (0..d).map(|i| s[i] * dot(&p[i * d..(i + 1) * d], s)).sum()
}

/// One dimension: every norm ball is `[-1, 1]`; golden-section search on
/// the concave objective, bounding the optimum via the final bracket.
fn maximize_interval(pb: &Problem<'_>) -> Solution {
    let f = |t: f64| (pb.objective)(&[t]).0;
    let (mut a, mut b) = (-1.0f64, 1.0f64);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut e = a + r * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    let mut it = 0;
    while b - a > 1e-15 && it < 200 {
        it += 1;
        if fc >= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + r * (b - a);
            fe = f(e);
        }
    }
    let mut cands = vec![-1.0, 0.0, 1.0, a, b, c, e];
    cands.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    let (mut bx, mut bv) = (0.0, f64::NEG_INFINITY);
    for t in cands {
        let v = f(t);
        if v > bv {
            bv = v;
            bx = t;
        }
    }
    let (_, s) = (pb.objective)(&[bx]);
    let width = (b - a).max(f64::EPSILON);
    Solution {
        x: vec![bx],
        value: bv,
        upper: bv + s[0].abs() * width,
        iterations: it,
    }
}
