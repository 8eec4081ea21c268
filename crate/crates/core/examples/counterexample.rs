//! ℓ∞ adversarial training on the two-point data: the iterates leave the
//! ℓ2 max-margin direction u₂ and drift toward the robust direction ū, which
//! differs from both u₂ and the ℓ∞ max-margin direction u_∞.
//!
//! Run with `cargo run --release --example counterexample`.

use mbl::presets::counterexample_trace;
use mbl::Result;

fn main() -> Result<()> {
    let (theta, trace, [ubar, u2, uinf]) = counterexample_trace(1_000_000, false)?;
    println!("ū = {ubar:?}\nu₂ = {u2:?}\nu_∞ = {uinf:?}");
    println!("{:>8} {:>11} {:>11} {:>11}", "t", "err ū", "err u₂", "err u_∞");
    let mut next = 1;
    for r in &trace.rows {
        if r.t >= next {
            println!("{:>8} {:>11.3e} {:>11.3e} {:>11.3e}", r.t, r.align[0], r.align[1], r.align[2]);
            next *= 10;
        }
    }
    println!("final θ = {theta:?}");
    Ok(())
}
