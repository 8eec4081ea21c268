//! Empirical adversarial and clean exponential risk, evaluated in the log
//! domain.
//!
//! With per-sample exponents `ℓ_i(θ) = -z_iᵀθ + pen(θ)` the risk is
//! `L(θ) = (1/n) Σ exp(ℓ_i)`. We keep `ln L` (which stays finite long after
//! `L` itself underflows) and the normalized gradient `∇L / L`, which is a
//! softmax-weighted average and never underflows.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::perturbation::{penalty, worst_case_perturbation, PerturbationModel};
use crate::vecops::{dot, log_sum_exp};
use crate::error::Result;

/// A risk value held as its natural logarithm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LossValue {
    pub log_value: f64,
}

impl LossValue {
    pub fn value(self) -> f64 {
        self.log_value.exp()
    }

    pub fn log10(self) -> f64 {
        self.log_value / std::f64::consts::LN_10
    }
}

/// Everything the trainer and the diagnostics need at one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: LossValue,
    /// `∇L(θ) / L(θ)`; always representable.
    pub grad_over_loss: Vec<f64>,
    /// `∇L(θ)`; the zero vector when `L(θ)` underflows.
    pub grad: Vec<f64>,
    /// Set when `L(θ)` is too small for the gradient to be represented.
    pub underflow: bool,
}

/// The signed data `z_i = y_i x_i` laid out for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Objective {
    n: usize,
    d: usize,
    z: Vec<f64>,
    model: PerturbationModel,
    exps: Vec<f64>,
}

impl Objective {
    pub fn new(ds: &LabeledDataset, model: &PerturbationModel) -> Self {
        let mut z = Vec::with_capacity(ds.n() * ds.d());
        for i in 0..ds.n() {
            z.extend(ds.signed_point(i));
        }
        Self {
            n: ds.n(),
            d: ds.d(),
            z,
            model: model.clone(),
            exps: vec![0.0; ds.n()],
        }
    }

    pub fn model(&self) -> &PerturbationModel {
        &self.model
    }

    pub fn z(&self, i: usize) -> &[f64] {
        &self.z[i * self.d..(i + 1) * self.d]
    }

    pub fn evaluate(&mut self, theta: &[f64]) -> Evaluation {
        let (pen, pen_grad) = penalty(&self.model, theta);
        for i in 0..self.n {
            self.exps[i] = -dot(&self.z[i * self.d..(i + 1) * self.d], theta) + pen;
        }
        let lse = log_sum_exp(&self.exps);
        let log_value = lse - (self.n as f64).ln();
        let mut g = pen_grad;
        for i in 0..self.n {
            let w = (self.exps[i] - lse).exp();
            if w != 0.0 {
                let zi = &self.z[i * self.d..(i + 1) * self.d];
                for (gj, zj) in g.iter_mut().zip(zi) {
                    *gj -= w * zj;
                }
            }
        }
        let scale = log_value.exp();
        let underflow = scale == 0.0 && g.iter().any(|v| *v != 0.0);
        let grad = g.iter().map(|v| v * scale).collect();
        Evaluation {
            loss: LossValue { log_value },
            grad_over_loss: g,
            grad,
            underflow,
        }
    }

    pub fn log_loss(&mut self, theta: &[f64]) -> f64 {
        let pen = crate::perturbation::penalty_value(&self.model, theta);
        for i in 0..self.n {
            self.exps[i] = -dot(&self.z[i * self.d..(i + 1) * self.d], theta) + pen;
        }
        log_sum_exp(&self.exps) - (self.n as f64).ln()
    }
}

/// `ln L_adv(θ)` in penalty form.
pub fn adv_loss(ds: &LabeledDataset, model: &PerturbationModel, theta: &[f64]) -> LossValue {
    LossValue {
        log_value: Objective::new(ds, model).log_loss(theta),
    }
}

/// `∇L_adv(θ)`; at `θ = 0` this is the clean subgradient `-(1/n) Σ z_i` for
/// ℓq models.
pub fn adv_grad(ds: &LabeledDataset, model: &PerturbationModel, theta: &[f64]) -> Vec<f64> {
    Objective::new(ds, model).evaluate(theta).grad
}

pub fn clean_loss(ds: &LabeledDataset, theta: &[f64]) -> LossValue {
    adv_loss(ds, &PerturbationModel::Clean, theta)
}

/// `ln L_adv(θ)` computed by materializing the worst-case perturbation of
/// every sample, rather than through the penalty. Only ℓq models have an
/// explicit adversary.
pub fn adv_loss_explicit(ds: &LabeledDataset, model: &PerturbationModel, theta: &[f64]) -> Result<LossValue> {
    let mut exps = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        let y = ds.label(i);
        let delta = worst_case_perturbation(model, theta, y)?;
        let xt: Vec<f64> = ds.point(i).iter().zip(&delta).map(|(x, dl)| x + dl).collect();
        exps.push(-y * dot(&xt, theta));
    }
    Ok(LossValue {
        log_value: log_sum_exp(&exps) - (ds.n() as f64).ln(),
    })
}

/// `(min_i z_iᵀu, min_i z_iᵀu - pen(u))` at the ℓ2-normalized direction
/// `u = θ/‖θ‖₂`; both zero at the origin.
pub fn normalized_margins(ds: &LabeledDataset, model: &PerturbationModel, theta: &[f64]) -> (f64, f64) {
    let Some(u) = crate::vecops::normalized(theta) else {
        return (0.0, 0.0);
    };
    let clean = (0..ds.n())
        .map(|i| ds.signed_margin(i, &u))
        .fold(f64::INFINITY, f64::min);
    (clean, clean - crate::perturbation::penalty_value(model, &u))
}
