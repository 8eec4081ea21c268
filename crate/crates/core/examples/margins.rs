//! Max-margin and robust-margin directions on the builtin datasets, checked
//! against the brute-force angular oracle.
//!
//! Run with `cargo run --example margins`.

use mbl::dataset::builtin;
use mbl::margins::{brute_margin_2d, max_margin, robust_mixed_margin, MarginProblem};
use mbl::{Exponent, PerturbationModel, Result};

fn main() -> Result<()> {
    for name in ["paper-4pt", "paper-counterexample"] {
        let ds = builtin(name)?;
        println!("== {name} (n = {}, d = {})", ds.n(), ds.d());
        for q in [Exponent::ONE, Exponent::TWO, Exponent::INF] {
            let cert = max_margin(&ds, q)?;
            let brute = brute_margin_2d(&ds, &MarginProblem::MaxMargin { q }, 100_000)?;
            println!(
                "  ℓ{q} margin: γ = {:.9} at u = {:?} (oracle {:.9}, gap {:.1e}, active {:?})",
                cert.gamma, cert.u, brute.gamma, cert.residual, cert.active
            );
            let model = PerturbationModel::lq(q, 0.5 * cert.gamma)?;
            let robust = robust_mixed_margin(&ds, &model)?;
            let brute = brute_margin_2d(&ds, &MarginProblem::Robust(model.clone()), 100_000)?;
            println!(
                "    robust at c = γ/2: γ = {:.9} at u = {:?} (oracle {:.9})",
                robust.gamma, robust.u, brute.gamma
            );
        }
    }
    let ds = builtin("paper-counterexample")?;
    let ubar = robust_mixed_margin(&ds, &PerturbationModel::lq(Exponent::INF, 0.5)?)?;
    let s = 362f64.sqrt();
    println!(
        "robust ℓ∞ direction at c = 0.5: {:?}, closed form (19, 1)/√362 = [{}, {}]",
        ubar.u,
        19.0 / s,
        1.0 / s
    );
    Ok(())
}
