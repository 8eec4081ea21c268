//! First-order optimality of robust max-margin directions: the certificate
//! direction fits nonnegative multipliers exactly, a rotated one does not.
//!
//! Run with `cargo run --example kkt`.

use mbl::dataset::builtin;
use mbl::diagnostics::{kkt_residual_mixed, rotated_2d};
use mbl::margins::robust_mixed_margin;
use mbl::{Exponent, PerturbationModel, Result};

fn main() -> Result<()> {
    let ds = builtin("paper-counterexample")?;
    let cert = robust_mixed_margin(&ds, &PerturbationModel::lq(Exponent::INF, 0.5)?)?;
    for (label, dir) in [("certificate", cert.u.clone()), ("rotated by 0.1 rad", rotated_2d(&cert.u, 0.1))] {
        let r = kkt_residual_mixed(&dir, &ds, Exponent::INF, 0.5)?;
        println!(
            "{label:>18}: multipliers {:?}, stationarity {:.2e}, complementarity {:.2e}, feasibility {:.2e}",
            r.multipliers, r.stationarity_residual, r.complementarity_residual, r.feasibility_residual
        );
    }
    Ok(())
}
