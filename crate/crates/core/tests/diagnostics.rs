//! Invariant suite, landscape probe, KKT certificates, and rate fits on
//! complete runs.

mod common;

use common::grid_margin_2d;
use mbl::dataset::{builtin, rescale_to_unit_ball};
use mbl::diagnostics::{
    check_trace_invariants, fit_line, kkt_residual_mixed, landscape_probe, rate_summary, rotated_2d, InvariantReport, Regime,
};
use mbl::gdat::{derive_step_schedule, train, ScheduleMode, ScheduleSpec, StepSchedule, TrainerConfig};
use mbl::margins::Certificates;
use mbl::presets::rescaled_invariant_run;
use mbl::{Exponent, PerturbationModel};

#[test]
fn theorem_step_run_passes_every_hard_check() {
    let (_, _, _, report) = rescaled_invariant_run(0.5, 3000).unwrap();
    assert!(report.pass, "{:#?}", report.hard_failures());
    for name in ["descent-alignment", "gradient-norm", "norm-floor", "monotone-descent", "risk-bound", "orthogonal-bound", "penalty-equivalence"] {
        let c = report.get(name).unwrap_or_else(|| panic!("{name} missing"));
        assert!(c.checked > 0, "{name} ran");
        assert!(c.pass, "{name}: {c:?}");
    }
    let json = serde_json::to_string(&report).unwrap();
    let back: InvariantReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.pass, report.pass);
    assert_eq!(back.checks.len(), report.checks.len());
    for (a, b) in back.checks.iter().zip(&report.checks) {
        assert!(a.worst_slack == b.worst_slack || (a.worst_slack.is_nan() && b.worst_slack.is_nan()));
    }
}

#[test]
fn clean_gd_passes_the_suite() {
    let (ds, _) = rescale_to_unit_ball(&builtin("paper-4pt").unwrap()).unwrap();
    let model = PerturbationModel::Clean;
    let certs = Certificates::compute(&ds, &model).unwrap();
    let sched = derive_step_schedule(&ds, &model, &ScheduleSpec::auto(ScheduleMode::AutoL2), &certs).unwrap();
    let (_, trace) = train(&ds, &TrainerConfig::new(model, sched, 3000)).unwrap();
    let report = check_trace_invariants(&trace, &ds, &certs).unwrap();
    assert!(report.pass, "{:#?}", report.hard_failures());
}

#[test]
fn oversized_step_is_caught() {
    let (ds, _) = rescale_to_unit_ball(&builtin("paper-4pt").unwrap()).unwrap();
    let (g2, _) = grid_margin_2d(&ds, common::Objective2d::MaxMargin { q: 2.0 }, 20_000);
    let model = PerturbationModel::lq(Exponent::TWO, 0.95 * g2).unwrap();
    let certs = Certificates::compute(&ds, &model).unwrap();
    let cfg = TrainerConfig::new(model, StepSchedule::fixed_with_first(1.0, 10.0).unwrap(), 200).with_log_every(1);
    let (_, trace) = train(&ds, &cfg).unwrap();
    let report = check_trace_invariants(&trace, &ds, &certs).unwrap();
    assert!(!report.pass);
    let mono = report.get("monotone-descent").unwrap();
    assert!(!mono.pass && mono.hard);
    assert!(mono.worst_t.is_some());
}

#[test]
fn suite_needs_a_subcritical_radius() {
    let ds = builtin("paper-4pt").unwrap();
    let model = PerturbationModel::lq(Exponent::TWO, 5.0).unwrap();
    let certs = Certificates::compute(&ds, &model).unwrap();
    let (_, trace) = train(&ds, &TrainerConfig::new(model, StepSchedule::fixed(0.1).unwrap(), 3)).unwrap();
    assert!(matches!(check_trace_invariants(&trace, &ds, &certs), Err(mbl::Error::Config(_))));
}

#[test]
fn landscape_regimes() {
    let ds = builtin("paper-4pt").unwrap();
    let g = mbl::margins::max_margin(&ds, Exponent::TWO).unwrap().gamma;
    let sub = landscape_probe(&ds, Exponent::TWO, 0.5 * g, &[1.0, 10.0, 100.0], 10_000).unwrap();
    assert_eq!(sub.regime, Regime::Subcritical);
    let ray = sub.ray.unwrap();
    assert!(ray.strictly_decreasing);
    assert!(sub.minimizer.is_none());

    let sup = landscape_probe(&ds, Exponent::TWO, 1.5 * g, &[], 200_000).unwrap();
    assert_eq!(sup.regime, Regime::Supercritical);
    let m = sup.minimizer.unwrap();
    assert!(m.converged, "{m:?}");
    assert!(m.kkt_residual <= 1e-6);
    assert!(m.lambda_c > 0.0);
    assert!(m.penalty_factor >= 1.0);

    assert!(matches!(landscape_probe(&ds, Exponent::TWO, g, &[], 10), Err(mbl::Error::Precondition(_))));
}

#[test]
fn kkt_certificate_separates_optimum_from_rotation() {
    let (ds, _) = rescale_to_unit_ball(&builtin("paper-4pt").unwrap()).unwrap();
    let (g2, u2) = grid_margin_2d(&ds, common::Objective2d::MaxMargin { q: 2.0 }, 20_000);
    let c = 0.5 * g2;
    let good = kkt_residual_mixed(&u2, &ds, Exponent::TWO, c).unwrap();
    assert!(good.stationarity_residual <= 1e-6);
    assert!(good.feasibility_residual <= 1e-9);
    assert!(good.multipliers.iter().all(|a| *a >= 0.0));
    let bad = kkt_residual_mixed(&rotated_2d(&u2, 0.1), &ds, Exponent::TWO, c).unwrap();
    assert!(bad.stationarity_residual > 1e-2);
    assert!(kkt_residual_mixed(&[0.0, 0.0], &ds, Exponent::TWO, c).is_err());
}

#[test]
fn rate_fits() {
    let ds = builtin("paper-4pt").unwrap();
    let cfg = TrainerConfig::new(PerturbationModel::Clean, StepSchedule::fixed(1.0).unwrap(), 20_000).with_reference("u2", vec![0.0, 1.0]);
    let (_, trace) = train(&ds, &cfg).unwrap();
    let r = rate_summary(&[&trace], "u2", Some((100, 20_000))).unwrap();
    assert!(r.inverse_log.r2 > 0.9, "{r:?}");
    assert!(r.power.slope < 0.0);
    assert!(r.rows_used >= 10);
    assert!(matches!(rate_summary(&[&trace], "nope", None), Err(mbl::Error::MissingColumn(_))));

    // all rows carry the same error: flat fits
    let mut flat = trace.clone();
    let row = flat.rows[5].clone();
    for (k, r) in flat.rows.iter_mut().enumerate() {
        *r = mbl::gdat::TraceRow { t: k as u64, ..row.clone() };
    }
    let r = rate_summary(&[&flat], "u2", None).unwrap();
    assert_eq!(r.power.slope, 0.0);
    assert_eq!(r.power.r2, 1.0);

    let short = TrainerConfig::new(PerturbationModel::Clean, StepSchedule::fixed(1.0).unwrap(), 8).with_reference("u2", vec![0.0, 1.0]);
    let (_, t) = train(&ds, &short).unwrap();
    assert!(matches!(rate_summary(&[&t], "u2", None), Err(mbl::Error::InsufficientData(_))));
}

#[test]
fn line_fit_is_exact_on_a_line() {
    let x: Vec<f64> = (0..20).map(|v| v as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.25 * v).collect();
    let f = fit_line(&x, &y).unwrap();
    assert!((f.slope + 0.25).abs() <= 1e-14);
    assert!((f.intercept - 3.0).abs() <= 1e-13);
    assert!((f.r2 - 1.0).abs() <= 1e-14);
}
