//! Worst-case perturbations, dual-norm penalties, and the equality between
//! the penalty form of the adversarial risk and the risk at explicitly
//! perturbed samples.
//!
//! Run with `cargo run --example perturbations`.

use mbl::dataset::builtin;
use mbl::objective::{adv_loss, adv_loss_explicit};
use mbl::perturbation::{lp_norm, penalty_value, smoothed_l1, worst_case_perturbation};
use mbl::vecops::dot;
use mbl::{Exponent, PerturbationModel, Result};

fn main() -> Result<()> {
    let theta = [0.3, -1.2];
    for q in [1.0, 1.5, 2.0, 3.0, 1000.0, f64::INFINITY] {
        let q = Exponent::new(q)?;
        let model = PerturbationModel::lq(q, 0.5)?;
        let delta = worst_case_perturbation(&model, &theta, 1.0)?;
        println!(
            "q = {q:>5}: δ = {delta:>10.6?}  ‖δ‖_q = {:.12}  ⟨δ, θ⟩ = {:+.12}  -c‖θ‖_p = {:+.12}",
            lp_norm(&delta, q.value()),
            dot(&delta, &theta),
            -penalty_value(&model, &theta)
        );
    }

    let ds = builtin("paper-4pt")?;
    let model = PerturbationModel::lq(Exponent::INF, 0.5)?;
    let by_penalty = adv_loss(&ds, &model, &theta);
    let explicit = adv_loss_explicit(&ds, &model, &theta)?;
    println!(
        "ln L_adv: penalty form {:.15}, explicit perturbations {:.15}",
        by_penalty.log_value, explicit.log_value
    );

    for lambda in [1e-2, 1e-4, 1e-6] {
        let (h, _) = smoothed_l1(&theta, lambda);
        println!(
            "H_λ(θ) - ‖θ‖₁ at λ = {lambda:.0e}: {:.3e} (bound d√λ = {:.3e})",
            h - lp_norm(&theta, 1.0),
            2.0 * lambda.sqrt()
        );
    }
    Ok(())
}
