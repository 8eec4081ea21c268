//! Exhaustive two-dimensional margin oracle: scan unit directions on an
//! angle grid, then refine the best one by ternary search. It shares no code
//! with the main solver so the two can check each other.

use serde::Serialize;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::perturbation::{lp_norm, penalty_value, Exponent, PerturbationModel};

/// Which margin objective to scan.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginProblem {
    /// `max_{‖u‖_p = 1} min_i z_iᵀu` with `p` conjugate to `q`.
    MaxMargin { q: Exponent },
    /// `max_{‖u‖₂ = 1} min_i z_iᵀu - pen(u)` for the given adversary.
    Robust(PerturbationModel),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteResult {
    pub gamma: f64,
    pub u: Vec<f64>,
}

/// Final bracket width of the angular refinement.
const ANGLE_WIDTH: f64 = 1e-10;

pub fn brute_margin_2d(ds: &LabeledDataset, problem: &MarginProblem, resolution: usize) -> Result<BruteResult> {
    if ds.d() != 2 {
        return Err(Error::Unsupported(format!(
            "brute-force oracle needs d = 2, got d = {}",
            ds.d()
        )));
    }
    if resolution < 3 {
        return Err(Error::Config(format!("resolution {resolution} is below 3")));
    }
    let z = ds.signed_points();
    let dir = |phi: f64| -> Vec<f64> {
        let v = [phi.cos(), phi.sin()];
        match problem {
            MarginProblem::MaxMargin { q } => {
                let n = lp_norm(&v, q.dual().value());
                vec![v[0] / n, v[1] / n]
            }
            MarginProblem::Robust(_) => v.to_vec(),
        }
    };
    let obj = |phi: f64| -> f64 {
        let u = dir(phi);
        let m = z
            .iter()
            .map(|zi| zi[0] * u[0] + zi[1] * u[1])
            .fold(f64::INFINITY, f64::min);
        match problem {
            MarginProblem::MaxMargin { .. } => m,
            MarginProblem::Robust(model) => m - penalty_value(model, &u),
        }
    };
    let h = std::f64::consts::TAU / resolution as f64;
    let mut best_k = 0;
    let mut best_v = f64::NEG_INFINITY;
    for k in 0..resolution {
        let v = obj(k as f64 * h);
        if v > best_v {
            best_v = v;
            best_k = k;
        }
    }
    let (mut a, mut b) = ((best_k as f64 - 1.0) * h, (best_k as f64 + 1.0) * h);
    while b - a > ANGLE_WIDTH {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if obj(m1) < obj(m2) {
            a = m1;
        } else {
            b = m2;
        }
    }
    let mut phi = 0.5 * (a + b);
    let mut gamma = obj(phi);
    if best_v > gamma {
        phi = best_k as f64 * h;
        gamma = best_v;
    }
    Ok(BruteResult { gamma, u: dir(phi) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::builtin;

    #[test]
    fn four_point_l2() {
        let ds = builtin("paper-4pt").unwrap();
        let r = brute_margin_2d(&ds, &MarginProblem::MaxMargin { q: Exponent::TWO }, 1_000_000).unwrap();
        assert!((r.gamma - 1.0).abs() < 1e-8);
        assert!(r.u[0].abs() < 1e-8 && (r.u[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn counterexample_robust_linf() {
        let ds = builtin("paper-counterexample").unwrap();
        let m = PerturbationModel::lq(Exponent::INF, 0.5).unwrap();
        let r = brute_margin_2d(&ds, &MarginProblem::Robust(m), 100_000).unwrap();
        assert!((r.gamma - 181.0 / 362f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn single_point() {
        let ds = LabeledDataset::new("one", vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
        let r = brute_margin_2d(&ds, &MarginProblem::MaxMargin { q: Exponent::TWO }, 1000).unwrap();
        assert!((r.gamma - 1.0).abs() < 1e-12);
        assert!((r.u[0] - 1.0).abs() < 1e-9 && r.u[1].abs() < 1e-5);
    }

    #[test]
    fn wrong_dimension() {
        let ds = LabeledDataset::new("t", vec![vec![1.0, 0.0, 0.0]], vec![1.0]).unwrap();
        let e = brute_margin_2d(&ds, &MarginProblem::MaxMargin { q: Exponent::TWO }, 1000);
        assert!(matches!(e, Err(Error::Unsupported(_))));
    }
}
