//! `mbl`: margins, training runs, verification, presets, sweeps, and plots.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mbl::dataset::{load_dataset, rescale_to_unit_ball};
use mbl::diagnostics::check_trace_invariants;
use mbl::gdat::ScheduleSpec;
use mbl::margins::{max_margin, robust_mixed_margin, CertificateReport};
use mbl::plot::{render_plot, PlotSpec};
use mbl::presets::run_preset;
use mbl::runner::{compare_traces, ensure_dir, execute, write_artifacts, write_json, RunConfig, SweepConfig};
use mbl::{Error, Exponent, PerturbationModel, Result};

#[derive(Parser)]
#[command(name = "mbl", version, about = "Adversarial training of linear classifiers on separable data")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Output directory (output file for `plot`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run or sweep configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset name for `preset`.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Seed for generated datasets; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sub-runs.
    #[arg(long, global = true, env = "MBL_JOBS")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve max-margin and robust-margin problems and print certificates.
    Margin(MarginArgs),
    /// Train as configured and write the trace, certificates, and plots.
    Train,
    /// Train alongside a clean GD baseline and report the orderings.
    Compare {
        /// First logged step at which clean losses are compared.
        #[arg(long, default_value_t = 100)]
        from_t: u64,
    },
    /// Train and check every per-iterate inequality; exit 1 on a hard failure.
    Verify,
    /// Run a named preset: fig1a, fig1b, counterexample, landscape.
    Preset { name: Option<String> },
    /// Run a grid of configurations in parallel.
    Sweep,
    /// Render columns of one or more CSV files as an SVG line plot.
    Plot(PlotArgs),
}

#[derive(Args)]
struct MarginArgs {
    /// Builtin name or CSV path.
    #[arg(long)]
    dataset: String,
    /// Perturbation norm exponent (a real ≥ 1 or `inf`).
    #[arg(long, default_value = "2")]
    q: String,
    /// Radius for the robust margin.
    #[arg(long)]
    c: Option<f64>,
    /// Smoothing parameter (ℓ∞ only): solve the smoothed robust margin.
    #[arg(long)]
    lambda: Option<f64>,
    /// Rescale the data into the unit ball first.
    #[arg(long)]
    rescale: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Input CSV (repeatable).
    #[arg(long = "csv", required = true)]
    csvs: Vec<PathBuf>,
    /// Column for the horizontal axis.
    #[arg(long, default_value = "t")]
    x: String,
    /// Column to draw (repeatable).
    #[arg(long = "y", required = true)]
    columns: Vec<String>,
    #[arg(long)]
    log_x: bool,
    #[arg(long)]
    log_y: bool,
    #[arg(long, default_value = "")]
    title: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: cannot configure {j} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn parse_exponent(s: &str) -> Result<Exponent> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(Exponent::INF);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Config(format!("--q: `{s}` is not a number or `inf`")))?;
    Exponent::new(v)
}

fn load_run_config(g: &Global) -> Result<RunConfig> {
    let path = g
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config FILE is required".into()))?;
    let cfg = RunConfig::load(path)?;
    Ok(match g.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn out_dir(g: &Global, cfg: Option<&RunConfig>, fallback: &str) -> PathBuf {
    g.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> Result<bool> {
    let g = &cli.global;
    match cli.command {
        Command::Margin(a) => {
            let mut ds = load_dataset(&a.dataset)?;
            if a.rescale {
                ds = rescale_to_unit_ball(&ds)?.0;
            }
            let q = parse_exponent(&a.q)?;
            let mut reports = vec![CertificateReport::from(&max_margin(&ds, q)?)];
            if let Some(c) = a.c {
                let model = match a.lambda {
                    Some(l) if q.is_inf() => PerturbationModel::smoothed_linf(c, l)?,
                    Some(_) => return Err(Error::Config("--lambda applies only to q = inf".into())),
                    None => PerturbationModel::lq(q, c)?,
                };
                reports.push(CertificateReport::from(&robust_mixed_margin(&ds, &model)?));
            }
            let json = serde_json::to_string_pretty(&reports)?;
            println!("{json}");
            if let Some(out) = &g.out {
                ensure_dir(out)?;
                write_json(&out.join("margin.json"), &reports)?;
            }
            Ok(true)
        }
        Command::Train => {
            let cfg = load_run_config(g)?;
            let out = out_dir(g, Some(&cfg), "out");
            let art = execute(&cfg, true)?;
            let files = write_artifacts(&art, &out)?;
            report_files(&files);
            Ok(true)
        }
        Command::Compare { from_t } => {
            let mut cfg = load_run_config(g)?;
            if cfg.baseline.is_none() {
                cfg.baseline = Some(ScheduleSpec::fixed(1.0));
            }
            let out = out_dir(g, Some(&cfg), "out");
            let art = execute(&cfg, true)?;
            let mut files = write_artifacts(&art, &out)?;
            let (_, base) = art.baseline.as_ref().expect("baseline requested");
            let cmp = compare_traces(&art.trace, base, from_t);
            let p = out.join("comparison.json");
            write_json(&p, &cmp)?;
            files.push(p);
            report_files(&files);
            println!(
                "clean loss dominates from t = {from_t}: {} ({} of {} logged steps violate)",
                cmp.clean_loss_dominates, cmp.violations, cmp.checked
            );
            Ok(true)
        }
        Command::Verify => {
            let cfg = load_run_config(g)?;
            let out = out_dir(g, Some(&cfg), "out");
            let art = execute(&cfg, true)?;
            let report = check_trace_invariants(&art.trace, &art.dataset, &art.certificates)?;
            let mut files = write_artifacts(&art, &out)?;
            let p = out.join("invariants.json");
            write_json(&p, &report)?;
            files.push(p);
            report_files(&files);
            for c in &report.checks {
                let verdict = match (c.pass, c.hard) {
                    (true, _) => "PASS",
                    (false, true) => "FAIL",
                    (false, false) => "WARN",
                };
                println!(
                    "{verdict} {:<22} worst_slack={:+.3e} worst_t={} checked={}",
                    c.name,
                    c.worst_slack,
                    c.worst_t.map_or("-".into(), |t| t.to_string()),
                    c.checked
                );
            }
            Ok(report.pass)
        }
        Command::Preset { name } => {
            let name = name
                .or_else(|| g.preset.clone())
                .ok_or_else(|| Error::Config("a preset name is required".into()))?;
            let out = g.out.clone().unwrap_or_else(|| Path::new("out").join(&name));
            let outcome = run_preset(&name, &out, true)?;
            report_files(&outcome.files);
            println!("preset {name}: {}", if outcome.pass { "PASS" } else { "FAIL" });
            Ok(outcome.pass)
        }
        Command::Sweep => {
            let path = g
                .config
                .as_deref()
                .ok_or_else(|| Error::Config("--config FILE is required".into()))?;
            let mut sweep = SweepConfig::load(path)?;
            if let Some(s) = g.seed {
                sweep.base = sweep.base.with_seed(s);
            }
            let out = out_dir(g, Some(&sweep.base), "out");
            let rows = mbl::runner::run_sweep(&sweep, &out, true)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("sweep: {} runs, {failed} failed; summary in {}", rows.len(), out.join("sweep.csv").display());
            Ok(failed == 0)
        }
        Command::Plot(a) => {
            let out = g
                .out
                .clone()
                .ok_or_else(|| Error::Config("--out FILE.svg is required".into()))?;
            let inputs: Vec<&Path> = a.csvs.iter().map(PathBuf::as_path).collect();
            let cols: Vec<&str> = a.columns.iter().map(String::as_str).collect();
            let spec = PlotSpec {
                title: a.title,
                x_label: a.x.clone(),
                y_label: a.columns.join(", "),
                log_x: a.log_x,
                log_y: a.log_y,
            };
            render_plot(&inputs, &a.x, &cols, &out, &spec)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
    }
}
