//! The two regimes of the adversarial risk: below the critical radius the
//! risk decreases along the max-margin ray without a minimizer; above it a
//! finite minimizer exists and is also a minimizer of the norm-regularized
//! clean risk.
//!
//! Run with `cargo run --release --example landscape`.

use mbl::dataset::{builtin, generate_separable};
use mbl::diagnostics::landscape_probe;
use mbl::margins::max_margin;
use mbl::{Exponent, Result};

fn main() -> Result<()> {
    let ds = builtin("paper-counterexample")?;
    let g2 = max_margin(&ds, Exponent::TWO)?.gamma;
    let sub = landscape_probe(&ds, Exponent::TWO, 0.5 * g2, &[1.0, 10.0, 100.0], 0)?;
    let ray = sub.ray.expect("subcritical");
    for (a, l) in ray.alphas.iter().zip(&ray.log_losses) {
        println!("c = γ₂/2, α = {a:>5}: ln L_adv(α u₂) = {l:.6}");
    }
    let sup = landscape_probe(&ds, Exponent::TWO, 1.2 * g2, &[], 10_000)?;
    println!("c = 1.2γ₂: {:?}", sup.minimizer.expect("supercritical"));

    let ds = generate_separable(7, 12, 2, 0.2)?;
    for q in [Exponent::TWO, Exponent::INF] {
        let g = max_margin(&ds, q)?.gamma;
        let m = landscape_probe(&ds, q, 1.1 * g, &[], 200_000)?.minimizer.expect("supercritical");
        println!(
            "random data, q = {q}, c = 1.1γ_q: θ̂ = {:?}, λ(c) = {:.6}, KKT residual {:.2e}, converged {}",
            m.theta_hat, m.lambda_c, m.kkt_residual, m.converged
        );
    }
    Ok(())
}
