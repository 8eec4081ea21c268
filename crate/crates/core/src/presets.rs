//! Fixed experiment bundles on the builtin datasets.
//!
//! * `fig1a`: GD (η = 1) against ℓ2 GDAT (c = 0.95γ₂, η = 0.1) on the
//!   four-point data for 2.5·10⁴ steps, plus the invariant suite on the
//!   rescaled data with the theorem step size.
//! * `fig1b`: ℓq GDAT with q = 1000, exact ℓ∞ GDAT, and smoothed-ℓ∞ GDAT
//!   (λ = 1e-6) at c = 0.5, η = 0.1 for 5·10⁵ steps.
//! * `counterexample`: ℓ∞ GDAT (c = 0.5, η = 0.1) on the two-point data for
//!   10⁶ steps, tracking the robust direction ū, u₂, and u_∞.
//! * `landscape`: both regimes of the adversarial risk for q = 2 and q = ∞.
//!
//! Sub-runs of a preset execute in parallel; every file is deterministic.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{builtin, rescale_to_unit_ball, LabeledDataset};
use crate::diagnostics::{check_trace_invariants, kkt_residual_mixed, landscape_probe, InvariantReport, LandscapeReport, KKTReport};
use crate::error::{Error, Result};
use crate::gdat::{
    default_log_every, derive_step_schedule, train, Reference, ScheduleMode, ScheduleSpec, StepSchedule,
    TrainerConfig, TrainingTrace,
};
use crate::margins::{max_margin, robust_mixed_margin, CertificateReport, Certificates};
use crate::perturbation::{Exponent, PerturbationModel};
use crate::runner::{compare_traces, ensure_dir, write_json, write_traces, Comparison};
use crate::vecops::{norm2, normalized, sub};

pub const PRESET_NAMES: [&str; 4] = ["fig1a", "fig1b", "counterexample", "landscape"];

/// What a preset wrote and whether its asserted properties held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetOutcome {
    pub name: String,
    pub pass: bool,
    pub files: Vec<PathBuf>,
}

/// Run the named preset into `out`.
pub fn run_preset(name: &str, out: &Path, heartbeat: bool) -> Result<PresetOutcome> {
    ensure_dir(out)?;
    let (pass, files) = match name {
        "fig1a" => {
            let (s, f) = fig1a(out, heartbeat)?;
            (s.pass, f)
        }
        "fig1b" => {
            let (s, f) = fig1b(out, heartbeat)?;
            (s.pass, f)
        }
        "counterexample" => {
            let (s, f) = counterexample(out, heartbeat)?;
            (s.pass, f)
        }
        "landscape" => {
            let (s, f) = landscape(out)?;
            (s.pass, f)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (expected one of: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(PresetOutcome {
        name: name.to_string(),
        pass,
        files,
    })
}

fn reference(label: &str, direction: &[f64]) -> Reference {
    Reference {
        label: label.to_string(),
        direction: normalized(direction).expect("certificate directions are nonzero"),
    }
}

fn trainer(model: PerturbationModel, schedule: StepSchedule, iterations: u64, refs: &[Reference], heartbeat: bool) -> TrainerConfig {
    let mut cfg = TrainerConfig::new(model, schedule, iterations).with_log_every(default_log_every(iterations));
    cfg.references = refs.to_vec();
    cfg.heartbeat = heartbeat;
    cfg
}

fn unit(theta: &[f64]) -> Vec<f64> {
    normalized(theta).unwrap_or_else(|| theta.to_vec())
}

pub const FIG1A_ITERATIONS: u64 = 25_000;
/// Iterations of the rescaled invariant run bundled with `fig1a`.
pub const FIG1A_INVARIANT_ITERATIONS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1aSummary {
    pub gamma2: f64,
    pub c: f64,
    /// Orderings of the adversarial run against GD from `t = 100` on.
    pub comparison: Comparison,
    /// Invariant suite on the rescaled data with the automatic ℓ2 step.
    pub invariants: InvariantReport,
    pub pass: bool,
}

/// GD against ℓ2 GDAT on the four-point data, as plotted in the experiments.
pub fn fig1a_traces(heartbeat: bool) -> Result<(Certificates, TrainingTrace, TrainingTrace)> {
    let ds = builtin("paper-4pt")?;
    let gamma2 = max_margin(&ds, Exponent::TWO)?.gamma;
    let model = PerturbationModel::lq(Exponent::TWO, 0.95 * gamma2)?;
    let certs = Certificates::compute(&ds, &model)?;
    let refs = [reference("u2", &certs.l2.u)];
    let adv = trainer(model, StepSchedule::fixed(0.1)?, FIG1A_ITERATIONS, &refs, heartbeat);
    let gd = trainer(PerturbationModel::Clean, StepSchedule::fixed(1.0)?, FIG1A_ITERATIONS, &refs, heartbeat);
    let (a, g) = rayon::join(|| train(&ds, &adv), || train(&ds, &gd));
    Ok((certs, a?.1, g?.1))
}

/// Automatic-step ℓ2 GDAT on rescaled four-point data with `c = fraction·γ₂`,
/// checked against every per-iterate inequality.
pub fn rescaled_invariant_run(fraction: f64, iterations: u64) -> Result<(LabeledDataset, Certificates, TrainingTrace, InvariantReport)> {
    let (ds, _) = rescale_to_unit_ball(&builtin("paper-4pt")?)?;
    let gamma2 = max_margin(&ds, Exponent::TWO)?.gamma;
    let model = PerturbationModel::lq(Exponent::TWO, fraction * gamma2)?;
    let certs = Certificates::compute(&ds, &model)?;
    let schedule = derive_step_schedule(&ds, &model, &ScheduleSpec::auto(ScheduleMode::AutoL2), &certs)?;
    let refs = [reference("u2", &certs.l2.u)];
    let (_, trace) = train(&ds, &trainer(model, schedule, iterations, &refs, false))?;
    let report = check_trace_invariants(&trace, &ds, &certs)?;
    Ok((ds, certs, trace, report))
}

pub fn fig1a(out: &Path, heartbeat: bool) -> Result<(Fig1aSummary, Vec<PathBuf>)> {
    let (main, inv) = rayon::join(
        || fig1a_traces(heartbeat),
        || rescaled_invariant_run(0.95, FIG1A_INVARIANT_ITERATIONS),
    );
    let (certs, adv, gd) = main?;
    let (_, _, inv_trace, invariants) = inv?;
    let comparison = compare_traces(&adv, &gd, 100);
    let mut files = write_traces(out, "", &[("gdat", &adv), ("gd", &gd)])?;
    files.extend(write_traces(out, "rescaled-", &[("rescaled-gdat", &inv_trace)])?);
    let pass = comparison.clean_loss_dominates
        && comparison.norm_larger
        && comparison.final_alignment.iter().all(|a| a.smaller)
        && invariants.pass;
    let summary = Fig1aSummary {
        gamma2: certs.l2.gamma,
        c: adv.header.resolved_c,
        comparison,
        invariants,
        pass,
    };
    for (name, value) in [
        ("certificates.json", serde_json::to_value(&certs)?),
        ("invariants.json", serde_json::to_value(&summary.invariants)?),
        ("summary.json", serde_json::to_value(&summary)?),
    ] {
        let p = out.join(name);
        write_json(&p, &value)?;
        files.push(p);
    }
    Ok((summary, files))
}

pub const FIG1B_ITERATIONS: u64 = 500_000;
pub const FIG1B_LAMBDA: f64 = 1e-6;
/// Largest ℓ2 distance between final directions counted as agreement.
pub const FIG1B_TOLERANCE: f64 = 5e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1bSummary {
    pub c: f64,
    pub final_directions: Vec<(String, Vec<f64>)>,
    /// ‖θ̄_{q=1000} - θ̄_∞‖₂.
    pub distance_q1000_linf: f64,
    /// ‖θ̄_λ - θ̄_∞‖₂ (consistency of the smoothed path).
    pub distance_smoothed_linf: f64,
    pub certificates: Vec<(String, CertificateReport)>,
    pub pass: bool,
}

/// One fig1b run: name, final iterate, trace, and robust-margin certificate.
pub type Fig1bRun = (String, Vec<f64>, TrainingTrace, CertificateReport);

/// The three ℓ∞-like runs on the four-point data.
pub fn fig1b_traces(iterations: u64, heartbeat: bool) -> Result<Vec<Fig1bRun>> {
    use rayon::prelude::*;
    let ds = builtin("paper-4pt")?;
    let c = 0.5;
    let exact = robust_mixed_margin(&ds, &PerturbationModel::lq(Exponent::INF, c)?)?;
    let l2 = max_margin(&ds, Exponent::TWO)?;
    let refs = [reference("u2", &l2.u), reference("u2inf", &exact.u)];
    let models = vec![
        ("q1000", PerturbationModel::lq(Exponent::new(1000.0)?, c)?),
        ("linf", PerturbationModel::lq(Exponent::INF, c)?),
        ("smoothed", PerturbationModel::smoothed_linf(c, FIG1B_LAMBDA)?),
    ];
    models
        .into_par_iter()
        .map(|(name, model)| {
            let cert = CertificateReport::from(&robust_mixed_margin(&ds, &model)?);
            let cfg = trainer(model, StepSchedule::fixed(0.1)?, iterations, &refs, heartbeat);
            let (theta, trace) = train(&ds, &cfg)?;
            Ok((name.to_string(), theta, trace, cert))
        })
        .collect()
}

pub fn fig1b(out: &Path, heartbeat: bool) -> Result<(Fig1bSummary, Vec<PathBuf>)> {
    let runs = fig1b_traces(FIG1B_ITERATIONS, heartbeat)?;
    let dir = |k: usize| unit(&runs[k].1);
    let distance_q1000_linf = norm2(&sub(&dir(0), &dir(1)));
    let distance_smoothed_linf = norm2(&sub(&dir(2), &dir(1)));
    let traces: Vec<(&str, &TrainingTrace)> = runs.iter().map(|(n, _, t, _)| (n.as_str(), t)).collect();
    let mut files = write_traces(out, "", &traces)?;
    let summary = Fig1bSummary {
        c: 0.5,
        final_directions: runs.iter().map(|(n, th, _, _)| (n.clone(), unit(th))).collect(),
        distance_q1000_linf,
        distance_smoothed_linf,
        certificates: runs.iter().map(|(n, _, _, c)| (n.clone(), c.clone())).collect(),
        pass: distance_q1000_linf <= FIG1B_TOLERANCE,
    };
    let p = out.join("summary.json");
    write_json(&p, &summary)?;
    files.push(p);
    Ok((summary, files))
}

pub const COUNTEREXAMPLE_ITERATIONS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleSummary {
    /// Robust ℓ∞ direction ū at c = 0.5.
    pub u_bar: Vec<f64>,
    pub u2: Vec<f64>,
    pub u_inf: Vec<f64>,
    /// Final alignment errors to ū, u₂, u_∞.
    pub final_errors: [f64; 3],
    /// First logged step with error to ū at most 1e-3.
    pub first_t_within_1e3: Option<u64>,
    /// Error to u₂ and to u_∞, each divided by the error to ū.
    pub ratios: [f64; 2],
    /// The error to ū is the smallest of the three.
    pub u_bar_closest: bool,
    pub pass: bool,
}

pub fn counterexample_trace(iterations: u64, heartbeat: bool) -> Result<(Vec<f64>, TrainingTrace, [Vec<f64>; 3])> {
    let ds = builtin("paper-counterexample")?;
    let model = PerturbationModel::lq(Exponent::INF, 0.5)?;
    let ubar = robust_mixed_margin(&ds, &model)?.u;
    let u2 = max_margin(&ds, Exponent::TWO)?.u;
    let uinf = unit(&max_margin(&ds, Exponent::INF)?.u);
    let refs = [reference("ubar", &ubar), reference("u2", &u2), reference("uinf", &uinf)];
    let (theta, trace) = train(&ds, &trainer(model, StepSchedule::fixed(0.1)?, iterations, &refs, heartbeat))?;
    Ok((theta, trace, [ubar, u2, uinf]))
}

pub fn counterexample(out: &Path, heartbeat: bool) -> Result<(CounterexampleSummary, Vec<PathBuf>)> {
    let (_, trace, [u_bar, u2, u_inf]) = counterexample_trace(COUNTEREXAMPLE_ITERATIONS, heartbeat)?;
    let last = trace.last();
    let e = [last.align[0], last.align[1], last.align[2]];
    let first_t_within_1e3 = trace.rows.iter().find(|r| r.align[0] <= 1e-3).map(|r| r.t);
    let u_bar_closest = e[0] < e[1] && e[0] < e[2];
    let summary = CounterexampleSummary {
        u_bar,
        u2,
        u_inf,
        final_errors: e,
        first_t_within_1e3,
        ratios: [e[1] / e[0], e[2] / e[0]],
        u_bar_closest,
        pass: u_bar_closest && first_t_within_1e3.is_some(),
    };
    let mut files = write_traces(out, "", &[("gdat", &trace)])?;
    let p = out.join("summary.json");
    write_json(&p, &summary)?;
    files.push(p);
    Ok((summary, files))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSummary {
    pub probes: Vec<LandscapeReport>,
    /// KKT fit of the robust ℓ∞ direction at c = 0.5.
    pub kkt: KKTReport,
    pub pass: bool,
}

/// Ray samples for the subcritical probes.
pub const RAY_ALPHAS: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

pub fn landscape(out: &Path) -> Result<(LandscapeSummary, Vec<PathBuf>)> {
    use rayon::prelude::*;
    let ds = builtin("paper-counterexample")?;
    let g2 = max_margin(&ds, Exponent::TWO)?.gamma;
    let ginf = max_margin(&ds, Exponent::INF)?.gamma;
    let cases = [
        (Exponent::TWO, 0.5 * g2),
        (Exponent::TWO, 1.2 * g2),
        (Exponent::INF, 0.5 * ginf),
        (Exponent::INF, 1.2 * ginf),
    ];
    let probes: Vec<LandscapeReport> = cases
        .par_iter()
        .map(|&(q, c)| landscape_probe(&ds, q, c, &RAY_ALPHAS, 100_000))
        .collect::<Result<_>>()?;
    let ubar = robust_mixed_margin(&ds, &PerturbationModel::lq(Exponent::INF, 0.5)?)?.u;
    let kkt = kkt_residual_mixed(&ubar, &ds, Exponent::INF, 0.5)?;
    let pass = probes.iter().all(|p| match (&p.ray, &p.minimizer) {
        (Some(r), _) => r.strictly_decreasing && r.final_log10_loss < -12.0,
        (None, Some(m)) => m.converged && m.kkt_residual <= 1e-6 && m.lambda_c > 0.0,
        _ => false,
    }) && kkt.stationarity_residual <= 1e-6;
    let summary = LandscapeSummary { probes, kkt, pass };
    let p = out.join("landscape.json");
    write_json(&p, &summary)?;
    Ok((summary, vec![p]))
}
