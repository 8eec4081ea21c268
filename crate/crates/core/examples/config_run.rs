//! A JSON-configured run with a clean baseline, written to a directory as
//! trace CSVs, certificates, and SVG plots.
//!
//! Run with `cargo run --release --example config_run [OUT_DIR]`.

use std::path::PathBuf;

use mbl::runner::{compare_traces, execute, write_artifacts, RunConfig};
use mbl::Result;

const CONFIG: &str = r#"{
    "dataset": {"generate": {"n": 20, "d": 2, "margin": 0.1, "seed": 3}},
    "model": {"kind": "lq", "q": 2.0},
    "c_spec": {"fraction": 0.5, "of": "gamma2"},
    "schedule": {"mode": "auto-l2"},
    "baseline": {"mode": "auto-l2"},
    "T": 20000,
    "references": ["u2"]
}"#;

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mbl-config-run"));
    let cfg = RunConfig::from_json(CONFIG)?;
    let art = execute(&cfg, false)?;
    println!(
        "resolved c = {:.6}, step η = {:.6e}",
        art.trace.header.resolved_c, art.trace.header.schedule.eta
    );
    for f in write_artifacts(&art, &out)? {
        println!("wrote {}", f.display());
    }
    let (_, base) = art.baseline.as_ref().expect("baseline configured");
    let cmp = compare_traces(&art.trace, base, 100);
    println!("{}", serde_json::to_string_pretty(&cmp)?);
    Ok(())
}
