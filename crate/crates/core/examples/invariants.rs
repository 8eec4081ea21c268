//! Per-iterate inequalities along a theorem-step training run on rescaled
//! data, and a negative control with an oversized step that breaks descent.
//!
//! Run with `cargo run --release --example invariants`.

use mbl::dataset::{builtin, rescale_to_unit_ball};
use mbl::diagnostics::{check_trace_invariants, InvariantReport};
use mbl::gdat::{train, StepSchedule, TrainerConfig};
use mbl::margins::{max_margin, Certificates};
use mbl::presets::rescaled_invariant_run;
use mbl::{Exponent, PerturbationModel, Result};

fn show(title: &str, report: &InvariantReport) {
    println!("{title}: overall {}", if report.pass { "PASS" } else { "FAIL" });
    for c in &report.checks {
        println!(
            "  {:<20} {} {:<4} worst slack {:+.3e} at t = {:?} over {} snapshots",
            c.name,
            if c.hard { "hard" } else { "soft" },
            if c.pass { "ok" } else { "FAIL" },
            c.worst_slack,
            c.worst_t,
            c.checked
        );
    }
}

fn main() -> Result<()> {
    let (_, certs, trace, report) = rescaled_invariant_run(0.5, 10_000)?;
    println!(
        "automatic ℓ2 step η = {:.6e}, α = {:?}, K = {:?}",
        trace.header.schedule.eta, certs.constants.alpha, certs.constants.k
    );
    show("rescaled four-point data, c = γ₂/2", &report);

    // An oversized step at a radius close to the margin overshoots and the
    // adversarial risk goes up.
    let (ds, _) = rescale_to_unit_ball(&builtin("paper-4pt")?)?;
    let g2 = max_margin(&ds, Exponent::TWO)?.gamma;
    let model = PerturbationModel::lq(Exponent::TWO, 0.95 * g2)?;
    let certs = Certificates::compute(&ds, &model)?;
    let cfg = TrainerConfig::new(model, StepSchedule::fixed_with_first(1.0, 10.0)?, 200).with_log_every(1);
    let (_, trace) = train(&ds, &cfg)?;
    show("negative control, c = 0.95γ₂, η = 10", &check_trace_invariants(&trace, &ds, &certs)?);
    Ok(())
}
