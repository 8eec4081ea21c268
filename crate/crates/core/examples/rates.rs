//! Rate fits of the alignment error: clean GD approaches the max-margin
//! direction like 1/log t.
//!
//! Run with `cargo run --release --example rates`.

use mbl::dataset::builtin;
use mbl::diagnostics::rate_summary;
use mbl::gdat::{gd_baseline, Reference, StepSchedule};
use mbl::margins::max_margin;
use mbl::{Exponent, Result};

fn main() -> Result<()> {
    let ds = builtin("paper-4pt")?;
    let u2 = max_margin(&ds, Exponent::TWO)?.u;
    let refs = vec![Reference {
        label: "u2".into(),
        direction: u2,
    }];
    let (_, trace) = gd_baseline(&ds, StepSchedule::fixed(1.0)?, 25_000, 10, refs)?;
    let r = rate_summary(&[&trace], "u2", Some((100, 25_000)))?;
    println!("rows used: {}", r.rows_used);
    println!("e vs 1/ln t:         slope {:.4}, R² {:.4}", r.inverse_log.slope, r.inverse_log.r2);
    println!("ln e vs ln ln t:     slope {:.4}, R² {:.4}", r.log_log.slope, r.log_log.r2);
    println!("ln e vs ln t:        slope {:.4}, R² {:.4}", r.power.slope, r.power.r2);
    if let Some(c) = r.clean_loss {
        println!("ln(-log10 L) vs ln t: slope {:.4}, R² {:.4}", c.slope, c.r2);
    }
    Ok(())
}
