//! Gradient descent on the adversarial risk (GDAT), clean gradient descent
//! as its zero-radius special case, theorem-derived step sizes, and trace
//! recording.
//!
//! The iteration starts from `θ⁰ = 0`. At the origin every worst-case
//! perturbation vanishes, so step 0 takes the clean subgradient with step
//! `η⁰`; every later step takes the adversarial gradient with step `η`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, SEPARABILITY_TOL};
use crate::error::{Error, Result};
use crate::margins::{max_margin, Certificates};
use crate::objective::{normalized_margins, Objective};
use crate::perturbation::{Exponent, PerturbationModel};
use crate::vecops::{alignment_error, norm2, normalized};

/// Iterations between heartbeat lines on standard error.
pub const HEARTBEAT_EVERY: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// ℓ2 perturbation, `η = min{(γ₂/e) / ((1+c)³γ₂ + 2c(1+c)), 1}`.
    AutoL2,
    /// ℓq perturbation with `1 < q < ∞`, `η = min{1/M_p, 1}`.
    AutoLq,
    /// Smoothed ℓ∞, `η = 1/(1 + 2c/√λ)²`.
    AutoSmoothed,
    /// User-supplied step.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    /// Step size of the first update.
    pub eta0: f64,
    /// Constant step size of every later update.
    pub eta: f64,
    pub mode: ScheduleMode,
}

impl StepSchedule {
    pub fn fixed(eta: f64) -> Result<Self> {
        Self::fixed_with_first(eta, eta)
    }

    pub fn fixed_with_first(eta0: f64, eta: f64) -> Result<Self> {
        for (name, v) in [("eta", eta), ("eta0", eta0)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be finite and positive")));
            }
        }
        Ok(Self {
            eta0,
            eta,
            mode: ScheduleMode::Fixed,
        })
    }
}

/// How a schedule is requested in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub mode: ScheduleMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta0: Option<f64>,
}

impl ScheduleSpec {
    pub fn auto(mode: ScheduleMode) -> Self {
        Self {
            mode,
            eta: None,
            eta0: None,
        }
    }

    pub fn fixed(eta: f64) -> Self {
        Self {
            mode: ScheduleMode::Fixed,
            eta: Some(eta),
            eta0: None,
        }
    }
}

/// Largest step the convergence theorems allow for this data and adversary,
/// or the fixed step the user asked for.
pub fn derive_step_schedule(
    ds: &LabeledDataset,
    model: &PerturbationModel,
    spec: &ScheduleSpec,
    certs: &Certificates,
) -> Result<StepSchedule> {
    if spec.mode == ScheduleMode::Fixed {
        let eta = spec
            .eta
            .ok_or_else(|| Error::Config("schedule.eta is required in fixed mode".into()))?;
        return StepSchedule::fixed_with_first(spec.eta0.unwrap_or(eta), eta);
    }
    if spec.eta.is_some() || spec.eta0.is_some() {
        return Err(Error::Config(
            "schedule.eta / schedule.eta0 are only accepted in fixed mode".into(),
        ));
    }
    let max_norm = ds.max_point_norm();
    if max_norm > 1.0 + 1e-12 {
        return Err(Error::Precondition(format!(
            "automatic step sizes assume every ‖x_i‖₂ ≤ 1 but the largest is {max_norm}; \
             rescale the data to the unit ball first"
        )));
    }
    let c = model.c();
    let d = ds.d() as f64;
    let eta = match spec.mode {
        ScheduleMode::AutoL2 => {
            match model {
                PerturbationModel::Clean => {}
                PerturbationModel::LqBall { q, .. } if *q == Exponent::TWO => {}
                m => {
                    return Err(Error::Unsupported(format!(
                        "auto-l2 needs an ℓ2 or clean model, got {}",
                        m.label()
                    )))
                }
            }
            let g = certs.l2.gamma;
            if c >= g {
                return Err(Error::Precondition(format!("auto-l2 needs c < γ₂ = {g}, got c = {c}")));
            }
            let e = std::f64::consts::E;
            ((g / e) / ((1.0 + c).powi(3) * g + 2.0 * c * (1.0 + c))).min(1.0)
        }
        ScheduleMode::AutoLq => {
            let q = match model {
                PerturbationModel::LqBall { q, .. } if q.value() > 1.0 && !q.is_inf() => *q,
                m => {
                    return Err(Error::Unsupported(format!(
                        "auto-lq needs an ℓq model with 1 < q < ∞, got {}",
                        m.label()
                    )))
                }
            };
            let g = mixed_gamma(certs, c)?;
            let p = q.dual().value();
            let sd = d.sqrt();
            let mp = ((1.0 + c * sd).powi(2)
                + c * (p - 1.0) / g * d.powf((3.0 * p - 2.0) / (2.0 * p - 2.0)))
                * (-g * g + c * sd).exp();
            (1.0 / mp).min(1.0)
        }
        ScheduleMode::AutoSmoothed => {
            let PerturbationModel::SmoothedLinf { lambda, .. } = model else {
                return Err(Error::Unsupported(format!(
                    "auto-smoothed needs a smoothed-linf model, got {}",
                    model.label()
                )));
            };
            mixed_gamma(certs, c)?;
            1.0 / (1.0 + 2.0 * c / lambda.sqrt()).powi(2)
        }
        ScheduleMode::Fixed => unreachable!("handled above"),
    };
    Ok(StepSchedule {
        eta0: 1.0,
        eta,
        mode: spec.mode,
    })
}

fn mixed_gamma(certs: &Certificates, c: f64) -> Result<f64> {
    match &certs.mixed {
        Some(m) if m.gamma > 0.0 => Ok(m.gamma),
        _ => Err(Error::Precondition(format!(
            "the robust margin at c = {c} is not positive; no automatic step size applies"
        ))),
    }
}

/// A labeled unit direction whose alignment error is traced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub label: String,
    pub direction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub model: PerturbationModel,
    pub schedule: StepSchedule,
    /// Number of updates `T`.
    pub iterations: u64,
    pub log_every: u64,
    pub references: Vec<Reference>,
    /// Print a progress line to standard error every 10⁵ iterations.
    pub heartbeat: bool,
}

impl TrainerConfig {
    pub fn new(model: PerturbationModel, schedule: StepSchedule, iterations: u64) -> Self {
        Self {
            model,
            schedule,
            iterations,
            log_every: default_log_every(iterations),
            references: Vec::new(),
            heartbeat: false,
        }
    }

    pub fn with_log_every(mut self, log_every: u64) -> Self {
        self.log_every = log_every;
        self
    }

    pub fn with_reference(mut self, label: impl Into<String>, direction: Vec<f64>) -> Self {
        self.references.push(Reference {
            label: label.into(),
            direction,
        });
        self
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.log_every < 1 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        for r in &self.references {
            if r.direction.len() != d {
                return Err(Error::Config(format!(
                    "reference `{}` has dimension {}, data has {d}",
                    r.label,
                    r.direction.len()
                )));
            }
            if normalized(&r.direction).is_none() {
                return Err(Error::Config(format!("reference `{}` is the zero vector", r.label)));
            }
            if r.label.is_empty() || r.label.contains([',', '\n', '\r']) {
                return Err(Error::Config(format!("invalid reference label `{}`", r.label)));
            }
        }
        Ok(())
    }
}

/// `max(1, T/2000)`: about two thousand rows per trace.
pub fn default_log_every(iterations: u64) -> u64 {
    (iterations / 2000).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    pub log10_adv_loss: f64,
    pub log10_clean_loss: f64,
    pub norm2: f64,
    /// `min_i z_iᵀθ/‖θ‖₂` (0 at the origin).
    pub min_clean_margin: f64,
    /// `min_i z_iᵀθ/‖θ‖₂ - pen(θ/‖θ‖₂)` (0 at the origin).
    pub min_adv_margin: f64,
    /// `1 - ⟨θ/‖θ‖₂, u_k⟩` per reference direction (1 at the origin).
    pub align: Vec<f64>,
    pub grad_underflow: bool,
}

/// Largest increase of `ln L_adv` between consecutive iterates `t ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentRecord {
    pub worst_log_increase: f64,
    /// The later iterate of the worst pair.
    pub worst_t: Option<u64>,
}

/// Run metadata written next to a trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub dataset: String,
    pub model: PerturbationModel,
    /// Absolute perturbation radius actually used.
    pub resolved_c: f64,
    pub schedule: StepSchedule,
    pub iterations: u64,
    pub log_every: u64,
    pub references: Vec<Reference>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub header: TraceHeader,
    pub rows: Vec<TraceRow>,
    /// `θᵗ` at every logged step, parallel to `rows`.
    pub snapshots: Vec<Vec<f64>>,
    pub descent: DescentRecord,
}

/// Run GDAT (or GD for the clean model) from the origin.
pub fn train(ds: &LabeledDataset, config: &TrainerConfig) -> Result<(Vec<f64>, TrainingTrace)> {
    config.validate(ds.d())?;
    let d = ds.d();
    let n = ds.n() as f64;
    let refs: Vec<Vec<f64>> = config
        .references
        .iter()
        .map(|r| normalized(&r.direction).expect("validated"))
        .collect();
    let mut obj = Objective::new(ds, &config.model);
    let mut clean = Objective::new(ds, &PerturbationModel::Clean);
    let mut theta = vec![0.0; d];
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    let mut descent = DescentRecord {
        worst_log_increase: f64::NEG_INFINITY,
        worst_t: None,
    };
    let mut prev_log = f64::NAN;
    let big_t = config.iterations;
    for t in 0..=big_t {
        let eval = obj.evaluate(&theta);
        let log_l = eval.loss.log_value;
        if t >= 2 {
            let inc = log_l - prev_log;
            if inc > descent.worst_log_increase {
                descent = DescentRecord {
                    worst_log_increase: inc,
                    worst_t: Some(t),
                };
            }
        }
        prev_log = log_l;
        if t % config.log_every == 0 || t == big_t {
            let (min_clean_margin, min_adv_margin) = normalized_margins(ds, &config.model, &theta);
            rows.push(TraceRow {
                t,
                log10_adv_loss: eval.loss.log10(),
                log10_clean_loss: clean.log_loss(&theta) / std::f64::consts::LN_10,
                norm2: norm2(&theta),
                min_clean_margin,
                min_adv_margin,
                align: refs.iter().map(|u| alignment_error(&theta, u)).collect(),
                grad_underflow: eval.underflow,
            });
            snapshots.push(theta.clone());
        }
        if t == big_t {
            break;
        }
        if t == 0 {
            // clean subgradient at the origin: θ¹ = (η⁰/n) Σ z_i
            let mut sum = vec![0.0; d];
            for i in 0..ds.n() {
                for (s, v) in sum.iter_mut().zip(obj.z(i)) {
                    *s += v;
                }
            }
            for (th, s) in theta.iter_mut().zip(&sum) {
                *th += config.schedule.eta0 * s / n;
            }
        } else {
            for (th, g) in theta.iter_mut().zip(&eval.grad) {
                *th -= config.schedule.eta * g;
            }
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure { iteration: t + 1 });
        }
        if config.heartbeat && (t + 1) % HEARTBEAT_EVERY == 0 {
            eprintln!(
                "[{}] t={} log10_adv_loss={:.6} norm2={:.6}",
                config.model.label(),
                t + 1,
                eval.loss.log10(),
                norm2(&theta)
            );
        }
    }
    let header = TraceHeader {
        dataset: ds.name().to_string(),
        resolved_c: config.model.c(),
        model: config.model.clone(),
        schedule: config.schedule,
        iterations: config.iterations,
        log_every: config.log_every,
        references: config.references.clone(),
    };
    Ok((
        theta,
        TrainingTrace {
            header,
            rows,
            snapshots,
            descent,
        },
    ))
}

/// Clean gradient descent: `train` with the clean model.
pub fn gd_baseline(
    ds: &LabeledDataset,
    schedule: StepSchedule,
    iterations: u64,
    log_every: u64,
    references: Vec<Reference>,
) -> Result<(Vec<f64>, TrainingTrace)> {
    let mut cfg = TrainerConfig::new(PerturbationModel::Clean, schedule, iterations).with_log_every(log_every);
    cfg.references = references;
    train(ds, &cfg)
}

impl TrainingTrace {
    pub fn labels(&self) -> Vec<&str> {
        self.header.references.iter().map(|r| r.label.as_str()).collect()
    }

    /// Index of the alignment column for `label`.
    pub fn align_index(&self, label: &str) -> Option<usize> {
        self.header.references.iter().position(|r| r.label == label)
    }

    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("a trace has at least two rows")
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from("t,log10_adv_loss,log10_clean_loss,norm2,min_clean_margin,min_adv_margin");
        for r in &self.header.references {
            let _ = write!(h, ",align_{}", r.label);
        }
        h.push_str(",grad_underflow");
        h
    }

    /// CSV text with 17 significant digits per real value.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                r.t,
                fmt17(r.log10_adv_loss),
                fmt17(r.log10_clean_loss),
                fmt17(r.norm2),
                fmt17(r.min_clean_margin),
                fmt17(r.min_adv_margin)
            );
            for a in &r.align {
                let _ = write!(out, ",{}", fmt17(*a));
            }
            let _ = writeln!(out, ",{}", u8::from(r.grad_underflow));
        }
        out
    }

    /// Write `<path>` (CSV) and `<path stem>.meta.json` (run header).
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::file(path, e))?;
        let meta = meta_path(path);
        let json = serde_json::to_string_pretty(&self.header)?;
        std::fs::write(&meta, json + "\n").map_err(|e| Error::file(&meta, e))
    }
}

/// Sidecar metadata path for a trace CSV.
pub fn meta_path(csv: &Path) -> std::path::PathBuf {
    let stem = csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv.with_file_name(format!("{stem}.meta.json"))
}

/// Scientific notation with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// The perturbation radius, absolute or as a fraction of a margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CSpec {
    Absolute(f64),
    Fraction { fraction: f64, of: MarginName },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginName {
    /// ℓ2 max margin `γ₂`.
    Gamma2,
    /// ℓq max margin `γ_q` for the model's `q`.
    Gammaq,
}

impl CSpec {
    pub fn resolve(&self, ds: &LabeledDataset, q: Option<Exponent>) -> Result<f64> {
        let c = match *self {
            CSpec::Absolute(c) => c,
            CSpec::Fraction { fraction, of } => {
                if !(fraction.is_finite() && fraction >= 0.0) {
                    return Err(Error::Config(format!("c.fraction = {fraction} must be >= 0")));
                }
                let q = match of {
                    MarginName::Gamma2 => Exponent::TWO,
                    MarginName::Gammaq => q.ok_or_else(|| {
                        Error::Config("c.of = gammaq needs a model with a norm exponent".into())
                    })?,
                };
                let g = max_margin(ds, q)?.gamma;
                if g <= SEPARABILITY_TOL {
                    return Err(Error::Precondition(format!(
                        "c is given as a fraction of the ℓ{q} margin but `{}` is not linearly separable",
                        ds.name()
                    )));
                }
                fraction * g
            }
        };
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::Config(format!("resolved c = {c} must be finite and >= 0")));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{builtin, rescale_to_unit_ball};

    #[test]
    fn first_step_is_mean_signed_point() {
        let ds = builtin("paper-4pt").unwrap();
        let cfg = TrainerConfig::new(PerturbationModel::Clean, StepSchedule::fixed(1.0).unwrap(), 1);
        let (th, tr) = train(&ds, &cfg).unwrap();
        assert_eq!(th, vec![0.6875, 1.0]);
        assert_eq!(tr.rows.len(), 2);
        assert_eq!(tr.snapshots[0], vec![0.0, 0.0]);
    }

    #[test]
    fn auto_l2_values() {
        let ds = LabeledDataset::new("t", vec![vec![0.0, 1.0], vec![0.0, -1.0]], vec![1.0, -1.0]).unwrap();
        let certs = Certificates::compute(&ds, &PerturbationModel::Clean).unwrap();
        let s = derive_step_schedule(&ds, &PerturbationModel::Clean, &ScheduleSpec::auto(ScheduleMode::AutoL2), &certs)
            .unwrap();
        assert!((s.eta - (-1f64).exp()).abs() < 1e-9);
        assert_eq!(s.eta0, 1.0);
    }

    #[test]
    fn auto_smoothed_value() {
        let ds = LabeledDataset::new("t", vec![vec![0.0, 1.0]], vec![1.0]).unwrap();
        let m = PerturbationModel::smoothed_linf(0.5, 1.0).unwrap();
        let certs = Certificates::compute(&ds, &m).unwrap();
        let s = derive_step_schedule(&ds, &m, &ScheduleSpec::auto(ScheduleMode::AutoSmoothed), &certs);
        // γ_{2,λ} = max_u u₂ - 0.5 Σ√(u_j² + 1) ≤ 1 - 0.5·2 = 0: infeasible
        assert!(matches!(s, Err(Error::Precondition(_))));
        let m = PerturbationModel::smoothed_linf(0.5, 1e-4).unwrap();
        let certs = Certificates::compute(&ds, &m).unwrap();
        let s = derive_step_schedule(&ds, &m, &ScheduleSpec::auto(ScheduleMode::AutoSmoothed), &certs).unwrap();
        assert!((s.eta - 1.0 / (1.0 + 2.0 * 0.5 / 1e-2f64).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn auto_modes_refuse_unnormalized_data() {
        let ds = builtin("paper-4pt").unwrap();
        let certs = Certificates::compute(&ds, &PerturbationModel::Clean).unwrap();
        let e = derive_step_schedule(&ds, &PerturbationModel::Clean, &ScheduleSpec::auto(ScheduleMode::AutoL2), &certs);
        assert!(matches!(e, Err(Error::Precondition(_))));
        let (r, _) = rescale_to_unit_ball(&ds).unwrap();
        let m = PerturbationModel::lq(Exponent::TWO, 0.5).unwrap();
        let certs = Certificates::compute(&r, &m).unwrap();
        let e = derive_step_schedule(&r, &m, &ScheduleSpec::auto(ScheduleMode::AutoL2), &certs);
        assert!(matches!(e, Err(Error::Precondition(_))), "c above γ₂ = 1/√5");
    }

    #[test]
    fn fixed_needs_value() {
        let ds = builtin("paper-4pt").unwrap();
        let certs = Certificates::compute(&ds, &PerturbationModel::Clean).unwrap();
        let spec = ScheduleSpec {
            mode: ScheduleMode::Fixed,
            eta: None,
            eta0: None,
        };
        assert!(matches!(
            derive_step_schedule(&ds, &PerturbationModel::Clean, &spec, &certs),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn log_schedule_and_csv_shape() {
        let ds = builtin("paper-4pt").unwrap();
        let cfg = TrainerConfig::new(PerturbationModel::Clean, StepSchedule::fixed(1.0).unwrap(), 10)
            .with_log_every(1)
            .with_reference("u2", vec![0.0, 1.0]);
        let (_, tr) = train(&ds, &cfg).unwrap();
        assert_eq!(tr.rows.len(), 11);
        let csv = tr.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,log10_adv_loss,log10_clean_loss,norm2,min_clean_margin,min_adv_margin,align_u2,grad_underflow"
        );
        assert_eq!(lines.count(), 11);
        let cfg = TrainerConfig::new(PerturbationModel::Clean, StepSchedule::fixed(1.0).unwrap(), 10).with_log_every(4);
        let (_, tr) = train(&ds, &cfg).unwrap();
        assert_eq!(tr.rows.iter().map(|r| r.t).collect::<Vec<_>>(), vec![0, 4, 8, 10]);
    }

    #[test]
    fn fmt17_has_seventeen_digits() {
        assert_eq!(fmt17(1.0), "1.0000000000000000e0");
        let v = 0.1f64 + 0.2;
        assert_eq!(fmt17(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn divergent_step_reports_iteration() {
        let ds = LabeledDataset::new("t", vec![vec![1.0], vec![-2.0]], vec![1.0, 1.0]).unwrap();
        let cfg = TrainerConfig::new(PerturbationModel::Clean, StepSchedule::fixed(1e300).unwrap(), 50);
        assert!(matches!(train(&ds, &cfg), Err(Error::NumericalFailure { .. })));
    }

    #[test]
    fn c_spec_json_and_resolution() {
        let ds = builtin("paper-4pt").unwrap();
        let s: CSpec = serde_json::from_str(r#"{"fraction":0.5,"of":"gamma2"}"#).unwrap();
        assert!((s.resolve(&ds, None).unwrap() - 0.5).abs() < 1e-8);
        let s: CSpec = serde_json::from_str("0.25").unwrap();
        assert_eq!(s.resolve(&ds, None).unwrap(), 0.25);
        let bad = LabeledDataset::new("t", vec![vec![1.0], vec![1.0]], vec![1.0, -1.0]).unwrap();
        let s = CSpec::Fraction {
            fraction: 0.5,
            of: MarginName::Gamma2,
        };
        assert!(matches!(s.resolve(&bad, None), Err(Error::Precondition(_))));
    }
}
