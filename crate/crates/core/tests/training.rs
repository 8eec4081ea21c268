//! Training runs: first step, determinism, baseline equivalence, automatic
//! step sizes, and trace layout.

mod common;

use common::{auto_l2_eta, auto_smoothed_eta, naive_log_adv_loss};
use mbl::dataset::{builtin, rescale_to_unit_ball, LabeledDataset};
use mbl::gdat::{derive_step_schedule, gd_baseline, train, ScheduleMode, ScheduleSpec, StepSchedule, TrainerConfig};
use mbl::margins::Certificates;
use mbl::{Exponent, PerturbationModel};

fn mean_z(ds: &LabeledDataset) -> Vec<f64> {
    let mut m = vec![0.0; ds.d()];
    for i in 0..ds.n() {
        for (j, v) in ds.point(i).iter().enumerate() {
            m[j] += ds.label(i) * v / ds.n() as f64;
        }
    }
    m
}

#[test]
fn first_step_is_scaled_mean_of_signed_points() {
    let ds = builtin("paper-4pt").unwrap();
    let expected = mean_z(&ds);
    for model in [
        PerturbationModel::Clean,
        PerturbationModel::lq(Exponent::TWO, 0.3).unwrap(),
        PerturbationModel::lq(Exponent::INF, 0.2).unwrap(),
        PerturbationModel::smoothed_linf(0.2, 1e-3).unwrap(),
    ] {
        let cfg = TrainerConfig::new(model, StepSchedule::fixed_with_first(0.7, 0.1).unwrap(), 1).with_log_every(1);
        let (theta, trace) = train(&ds, &cfg).unwrap();
        assert_eq!(trace.rows.len(), 2);
        for (a, b) in theta.iter().zip(&expected) {
            assert!((a - 0.7 * b).abs() <= 1e-15);
        }
    }
}

#[test]
fn logged_losses_match_direct_evaluation() {
    let ds = builtin("paper-4pt").unwrap();
    let cfg = TrainerConfig::new(PerturbationModel::lq(Exponent::new(3.0).unwrap(), 0.4).unwrap(), StepSchedule::fixed(0.1).unwrap(), 200)
        .with_log_every(10);
    let (_, trace) = train(&ds, &cfg).unwrap();
    for (row, theta) in trace.rows.iter().zip(&trace.snapshots).skip(1) {
        let direct = naive_log_adv_loss(&ds, theta, 3.0, 0.4) / std::f64::consts::LN_10;
        assert!((row.log10_adv_loss - direct).abs() <= 1e-12 * direct.abs().max(1.0), "t = {}", row.t);
        let clean = naive_log_adv_loss(&ds, theta, 3.0, 0.0) / std::f64::consts::LN_10;
        assert!((row.log10_clean_loss - clean).abs() <= 1e-12 * clean.abs().max(1.0));
    }
}

#[test]
fn training_is_bit_deterministic() {
    let ds = builtin("paper-counterexample").unwrap();
    let cfg = TrainerConfig::new(PerturbationModel::lq(Exponent::INF, 0.5).unwrap(), StepSchedule::fixed(0.1).unwrap(), 5000)
        .with_reference("u", vec![1.0, 0.0]);
    let (a, ta) = train(&ds, &cfg).unwrap();
    let (b, tb) = train(&ds, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.to_csv(), tb.to_csv());
}

#[test]
fn gd_baseline_is_clean_training() {
    let ds = builtin("paper-4pt").unwrap();
    let sched = StepSchedule::fixed(1.0).unwrap();
    let (a, ta) = gd_baseline(&ds, sched, 300, 3, Vec::new()).unwrap();
    let (b, tb) = train(&ds, &TrainerConfig::new(PerturbationModel::Clean, sched, 300).with_log_every(3)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.rows, tb.rows);
}

#[test]
fn norm_keeps_growing() {
    let ds = builtin("paper-4pt").unwrap();
    let model = PerturbationModel::lq(Exponent::TWO, 0.5).unwrap();
    let run = |t| train(&ds, &TrainerConfig::new(model.clone(), StepSchedule::fixed(0.1).unwrap(), t)).unwrap().1;
    let (short, long) = (run(1000), run(10_000));
    assert!(long.last().norm2 > short.last().norm2);
    assert!(long.last().log10_adv_loss < short.last().log10_adv_loss);
}

#[test]
fn automatic_steps_match_closed_forms() {
    let ds = LabeledDataset::new("pair", vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![1.0, -1.0]).unwrap();
    let clean = PerturbationModel::Clean;
    let certs = Certificates::compute(&ds, &clean).unwrap();
    let s = derive_step_schedule(&ds, &clean, &ScheduleSpec::auto(ScheduleMode::AutoL2), &certs).unwrap();
    assert!((s.eta - (-1.0f64).exp()).abs() <= 1e-15);
    assert!((s.eta - auto_l2_eta(1.0, 0.0)).abs() <= 1e-15);

    let l2 = PerturbationModel::lq(Exponent::TWO, 0.4).unwrap();
    let certs = Certificates::compute(&ds, &l2).unwrap();
    let s = derive_step_schedule(&ds, &l2, &ScheduleSpec::auto(ScheduleMode::AutoL2), &certs).unwrap();
    assert!((s.eta - auto_l2_eta(1.0, 0.4)).abs() <= 1e-15);

    let sm = PerturbationModel::smoothed_linf(0.1, 1.0).unwrap();
    let certs = Certificates::compute(&ds, &sm).unwrap();
    let s = derive_step_schedule(&ds, &sm, &ScheduleSpec::auto(ScheduleMode::AutoSmoothed), &certs).unwrap();
    assert!((s.eta - auto_smoothed_eta(0.1, 1.0)).abs() <= 1e-15);
    assert!((s.eta - 1.0 / 1.44).abs() <= 1e-15);
}

#[test]
fn automatic_step_needs_unit_ball_data() {
    let ds = builtin("paper-4pt").unwrap();
    let m = PerturbationModel::lq(Exponent::TWO, 0.1).unwrap();
    let certs = Certificates::compute(&ds, &m).unwrap();
    let err = derive_step_schedule(&ds, &m, &ScheduleSpec::auto(ScheduleMode::AutoL2), &certs).unwrap_err();
    assert!(matches!(err, mbl::Error::Precondition(_)));
    let (scaled, s) = rescale_to_unit_ball(&ds).unwrap();
    assert!((s - 1.0 / 5f64.sqrt()).abs() <= 1e-15);
    let certs = Certificates::compute(&scaled, &m).unwrap();
    assert!(derive_step_schedule(&scaled, &m, &ScheduleSpec::auto(ScheduleMode::AutoL2), &certs).is_ok());
}

#[test]
fn csv_has_one_row_per_logged_step() {
    let ds = builtin("paper-4pt").unwrap();
    let cfg = TrainerConfig::new(PerturbationModel::Clean, StepSchedule::fixed(1.0).unwrap(), 10)
        .with_log_every(1)
        .with_reference("u2", vec![0.0, 1.0]);
    let (_, trace) = train(&ds, &cfg).unwrap();
    let csv = trace.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 12);
    assert!(lines[0].starts_with("t,"));
    assert!(lines[0].contains("align_u2"));
    let ts: Vec<u64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ts, (0..=10).collect::<Vec<_>>());

    let cfg = TrainerConfig::new(PerturbationModel::Clean, StepSchedule::fixed(1.0).unwrap(), 95).with_log_every(10);
    let (_, trace) = train(&ds, &cfg).unwrap();
    // every 10th step plus the final one
    assert_eq!(trace.rows.last().unwrap().t, 95);
    assert_eq!(trace.rows.len(), 11);
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = builtin("paper-4pt").unwrap();
    let base = TrainerConfig::new(PerturbationModel::Clean, StepSchedule::fixed(1.0).unwrap(), 10);
    assert!(train(&ds, &TrainerConfig { iterations: 0, ..base.clone() }).is_err());
    assert!(train(&ds, &base.clone().with_log_every(0)).is_err());
    assert!(train(&ds, &base.clone().with_reference("bad", vec![0.0, 0.0])).is_err());
    assert!(train(&ds, &base.with_reference("short", vec![1.0])).is_err());
    assert!(StepSchedule::fixed(-1.0).is_err());
}
