//! Config-driven runs: a JSON `RunConfig` names the data, the adversary, the
//! step schedule, and the directions to track; `execute` trains (and
//! optionally a clean GD baseline alongside), and `write_artifacts` emits the
//! trace CSVs, certificates, and derived SVG plots.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_separable, load_dataset, rescale_to_unit_ball, LabeledDataset};
use crate::error::{Error, Result};
use crate::gdat::{
    default_log_every, derive_step_schedule, train, CSpec, Reference, ScheduleSpec, TrainerConfig, TrainingTrace,
};
use crate::margins::Certificates;
use crate::perturbation::PerturbationModel;
use crate::plot::{render_plot, PlotSpec};
use crate::vecops::normalized;

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSpec {
    /// A builtin name or a CSV path.
    Source(String),
    /// Seeded synthetic separable data.
    Generate { generate: GenerateSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub n: usize,
    pub d: usize,
    /// Target margin in `(0, 1)`.
    pub margin: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Named reference directions resolved from the margin certificates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceName {
    /// ℓ2 max-margin direction.
    U2,
    /// ℓq max-margin direction for the model's `q`, ℓ2-normalized.
    Uq,
    /// Robust margin direction of the model (for the smoothed model, the
    /// exact ℓ∞ robust direction at the same radius).
    U2q,
    /// Robust margin direction of the smoothed model.
    U2lambda,
}

impl ReferenceName {
    pub fn label(self) -> &'static str {
        match self {
            ReferenceName::U2 => "u2",
            ReferenceName::Uq => "uq",
            ReferenceName::U2q => "u2q",
            ReferenceName::U2lambda => "u2lambda",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceSpec {
    Named(ReferenceName),
    Custom { label: String, direction: Vec<f64> },
}

/// A complete, validated description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Rescale the data into the unit ball before anything else.
    #[serde(default)]
    pub rescale: bool,
    pub model: PerturbationModel,
    /// Overrides the model's radius; may be a fraction of a margin.
    #[serde(default, alias = "c", skip_serializing_if = "Option::is_none")]
    pub c_spec: Option<CSpec>,
    pub schedule: ScheduleSpec,
    #[serde(rename = "T", alias = "iterations")]
    pub iterations: u64,
    /// Defaults to `max(1, T/2000)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_every: Option<u64>,
    #[serde(default)]
    pub references: Vec<ReferenceSpec>,
    /// Optional clean-GD run on the same data with this schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<ScheduleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Parse and validate; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        // a radius given through c_spec makes the model's own c optional
        if let Some(obj) = value.as_object_mut() {
            let has_spec = obj.contains_key("c_spec") || obj.contains_key("c");
            if let Some(model) = obj.get_mut("model").and_then(|m| m.as_object_mut()) {
                let radial = matches!(
                    model.get("kind").and_then(|k| k.as_str()),
                    Some("lq") | Some("smoothed-linf")
                );
                if has_spec && radial && !model.contains_key("c") {
                    model.insert("c".into(), serde_json::Value::from(0.0));
                }
            }
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("T: must be at least 1".into()));
        }
        if self.log_every == Some(0) {
            return Err(Error::Config("log_every: must be at least 1".into()));
        }
        if self.c_spec.is_some() && self.model == PerturbationModel::Clean {
            return Err(Error::Config("c_spec: the clean model has no perturbation radius".into()));
        }
        if let DatasetSpec::Generate { generate } = &self.dataset {
            if !(generate.margin > 0.0 && generate.margin < 1.0) {
                return Err(Error::Config(format!(
                    "dataset.generate.margin: {} is outside (0, 1)",
                    generate.margin
                )));
            }
        }
        let mut labels: Vec<String> = Vec::new();
        for (k, r) in self.references.iter().enumerate() {
            let label = match r {
                ReferenceSpec::Named(n) => n.label().to_string(),
                ReferenceSpec::Custom { label, direction } => {
                    if normalized(direction).is_none() {
                        return Err(Error::Config(format!("references[{k}].direction: zero or non-finite vector")));
                    }
                    label.clone()
                }
            };
            if labels.contains(&label) {
                return Err(Error::Config(format!("references[{k}]: duplicate label `{label}`")));
            }
            labels.push(label);
        }
        Ok(())
    }

    /// Replace the seed of a generated dataset (no effect otherwise).
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let DatasetSpec::Generate { generate } = &mut self.dataset {
            generate.seed = seed;
        }
        self
    }

    pub fn log_every(&self) -> u64 {
        self.log_every.unwrap_or_else(|| default_log_every(self.iterations))
    }
}

/// Load (and optionally rescale) the data a config names.
pub fn load_config_dataset(cfg: &RunConfig) -> Result<LabeledDataset> {
    let ds = match &cfg.dataset {
        DatasetSpec::Source(s) => load_dataset(s)?,
        DatasetSpec::Generate { generate: g } => generate_separable(g.seed, g.n, g.d, g.margin)?,
    };
    Ok(if cfg.rescale { rescale_to_unit_ball(&ds)?.0 } else { ds })
}

/// Apply the config's radius (absolute or margin fraction) to its model.
pub fn resolve_model(cfg: &RunConfig, ds: &LabeledDataset) -> Result<PerturbationModel> {
    match &cfg.c_spec {
        None => Ok(cfg.model.clone()),
        Some(spec) => cfg.model.with_c(spec.resolve(ds, cfg.model.q())?),
    }
}

/// Look up reference directions in the certificates.
pub fn resolve_references(
    specs: &[ReferenceSpec],
    model: &PerturbationModel,
    certs: &Certificates,
    d: usize,
) -> Result<Vec<Reference>> {
    specs
        .iter()
        .map(|spec| {
            let (label, dir) = match spec {
                ReferenceSpec::Custom { label, direction } => {
                    if direction.len() != d {
                        return Err(Error::Config(format!(
                            "reference `{label}` has dimension {}, data has {d}",
                            direction.len()
                        )));
                    }
                    (label.clone(), direction.clone())
                }
                ReferenceSpec::Named(name) => {
                    let smoothed = matches!(model, PerturbationModel::SmoothedLinf { .. });
                    let dir = match name {
                        ReferenceName::U2 => Some(certs.l2.u.clone()),
                        ReferenceName::Uq => certs.lq.as_ref().map(|c| c.u.clone()),
                        ReferenceName::U2q if smoothed => certs.mixed_exact_linf.as_ref().map(|c| c.u.clone()),
                        ReferenceName::U2q => certs.mixed.as_ref().map(|c| c.u.clone()),
                        ReferenceName::U2lambda if smoothed => certs.mixed.as_ref().map(|c| c.u.clone()),
                        ReferenceName::U2lambda => None,
                    };
                    let dir = dir.ok_or_else(|| {
                        Error::Config(format!(
                            "reference `{}` is not available for {} (needs the matching model and c below the critical radius)",
                            name.label(),
                            model.label()
                        ))
                    })?;
                    (name.label().to_string(), dir)
                }
            };
            let direction = normalized(&dir)
                .ok_or_else(|| Error::Config(format!("reference `{label}` resolved to the zero vector")))?;
            Ok(Reference { label, direction })
        })
        .collect()
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dataset: LabeledDataset,
    /// Model with the resolved absolute radius.
    pub model: PerturbationModel,
    pub certificates: Certificates,
    pub theta: Vec<f64>,
    pub trace: TrainingTrace,
    pub baseline: Option<(Vec<f64>, TrainingTrace)>,
}

/// Train as configured; the baseline (if any) runs concurrently.
pub fn execute(cfg: &RunConfig, heartbeat: bool) -> Result<RunArtifacts> {
    cfg.validate()?;
    let ds = load_config_dataset(cfg)?;
    let model = resolve_model(cfg, &ds)?;
    let certs = Certificates::compute(&ds, &model)?;
    let schedule = derive_step_schedule(&ds, &model, &cfg.schedule, &certs)?;
    let references = resolve_references(&cfg.references, &model, &certs, ds.d())?;
    let mut tc = TrainerConfig::new(model.clone(), schedule, cfg.iterations).with_log_every(cfg.log_every());
    tc.references = references.clone();
    tc.heartbeat = heartbeat;
    let baseline_cfg = match &cfg.baseline {
        Some(spec) => {
            let s = derive_step_schedule(&ds, &PerturbationModel::Clean, spec, &certs)?;
            let mut b = TrainerConfig::new(PerturbationModel::Clean, s, cfg.iterations).with_log_every(cfg.log_every());
            b.references = references;
            b.heartbeat = heartbeat;
            Some(b)
        }
        None => None,
    };
    let (main, base) = rayon::join(
        || train(&ds, &tc),
        || baseline_cfg.as_ref().map(|b| train(&ds, b)).transpose(),
    );
    let (theta, trace) = main?;
    Ok(RunArtifacts {
        dataset: ds,
        model,
        certificates: certs,
        theta,
        trace,
        baseline: base?,
    })
}

/// Create `dir` (and parents), mapping failures to a file error.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

/// Write `<stem>.csv` (+ meta sidecar) for every trace, then loss, norm, and
/// alignment plots rendered from those CSVs under `<prefix>loss.svg` etc.
/// Returns the written paths.
pub fn write_traces(out: &Path, prefix: &str, traces: &[(&str, &TrainingTrace)]) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let mut written = Vec::new();
    let mut csvs = Vec::new();
    for (stem, tr) in traces {
        let p = out.join(format!("{stem}.csv"));
        tr.write(&p)?;
        written.push(p.clone());
        written.push(crate::gdat::meta_path(&p));
        csvs.push(p);
    }
    let inputs: Vec<&Path> = csvs.iter().map(PathBuf::as_path).collect();
    let plots: [(&str, Vec<String>, &str, bool); 3] = [
        (
            "loss",
            vec!["log10_clean_loss".into(), "log10_adv_loss".into()],
            "log10 loss",
            false,
        ),
        ("norm", vec!["norm2".into()], "‖θ‖₂", true),
        (
            "alignment",
            traces[0].1.labels().iter().map(|l| format!("align_{l}")).collect(),
            "1 - <θ/‖θ‖, u>",
            true,
        ),
    ];
    for (name, cols, ylabel, log_y) in plots {
        if cols.is_empty() {
            continue;
        }
        let svg = out.join(format!("{prefix}{name}.svg"));
        let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
        let spec = PlotSpec {
            title: format!("{prefix}{name}").trim_end_matches('-').to_string(),
            x_label: "t".into(),
            y_label: ylabel.into(),
            log_x: true,
            log_y,
        };
        render_plot(&inputs, "t", &cols, &svg, &spec)?;
        written.push(svg);
    }
    Ok(written)
}

/// Write a run's traces, certificates, and plots into `out`.
pub fn write_artifacts(art: &RunArtifacts, out: &Path) -> Result<Vec<PathBuf>> {
    let mut traces: Vec<(&str, &TrainingTrace)> = vec![("trace", &art.trace)];
    if let Some((_, b)) = &art.baseline {
        traces.push(("baseline", b));
    }
    let mut written = write_traces(out, "", &traces)?;
    let certs = out.join("certificates.json");
    write_json(&certs, &art.certificates)?;
    written.push(certs);
    Ok(written)
}

/// GDAT-versus-GD orderings over a pair of traces logged at the same steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// First step at which the clean-loss ordering is checked.
    pub from_t: u64,
    /// Logged steps `t ≥ from_t` present in both traces.
    pub checked: usize,
    /// Steps where the adversarial run's clean loss exceeds the baseline's.
    pub violations: usize,
    pub first_violation_t: Option<u64>,
    pub last_violation_t: Option<u64>,
    /// No violations.
    pub clean_loss_dominates: bool,
    pub final_t: u64,
    pub final_log10_clean_loss: [f64; 2],
    pub final_norm2: [f64; 2],
    pub norm_larger: bool,
    pub final_alignment: Vec<AlignmentComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentComparison {
    pub label: String,
    /// `[adversarial, baseline]` final alignment errors.
    pub errors: [f64; 2],
    pub smaller: bool,
}

/// Compare an adversarial trace against a clean baseline.
pub fn compare_traces(adv: &TrainingTrace, base: &TrainingTrace, from_t: u64) -> Comparison {
    let mut checked = 0;
    let mut bad: Vec<u64> = Vec::new();
    let mut j = 0;
    for r in &adv.rows {
        while j < base.rows.len() && base.rows[j].t < r.t {
            j += 1;
        }
        if j < base.rows.len() && base.rows[j].t == r.t && r.t >= from_t {
            checked += 1;
            if r.log10_clean_loss > base.rows[j].log10_clean_loss {
                bad.push(r.t);
            }
        }
    }
    let (a, b) = (adv.last(), base.last());
    let final_alignment = adv
        .labels()
        .iter()
        .filter_map(|l| {
            let ea = a.align[adv.align_index(l)?];
            let eb = b.align[base.align_index(l)?];
            Some(AlignmentComparison {
                label: (*l).to_string(),
                errors: [ea, eb],
                smaller: ea < eb,
            })
        })
        .collect();
    Comparison {
        from_t,
        checked,
        violations: bad.len(),
        first_violation_t: bad.first().copied(),
        last_violation_t: bad.last().copied(),
        clean_loss_dominates: bad.is_empty() && checked > 0,
        final_t: a.t,
        final_log10_clean_loss: [a.log10_clean_loss, b.log10_clean_loss],
        final_norm2: [a.norm2, b.norm2],
        norm_larger: a.norm2 > b.norm2,
        final_alignment,
    }
}

/// A grid of runs around a base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    /// Radii to try (absolute or margin fractions); empty keeps the base.
    #[serde(default)]
    pub c: Vec<CSpec>,
    /// Fixed step sizes to try; empty keeps the base schedule.
    #[serde(default)]
    pub eta: Vec<f64>,
    /// Dataset seeds to try (generated data only); empty keeps the base.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: SweepConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.base.validate()?;
        if !cfg.seeds.is_empty() && !matches!(cfg.base.dataset, DatasetSpec::Generate { .. }) {
            return Err(Error::Config("seeds: only generated datasets take a seed".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    /// Expand the grid in a fixed order (seed, c, eta).
    pub fn expand(&self) -> Vec<RunConfig> {
        let seeds: Vec<Option<u64>> = if self.seeds.is_empty() {
            vec![None]
        } else {
            self.seeds.iter().copied().map(Some).collect()
        };
        let cs: Vec<Option<CSpec>> = if self.c.is_empty() {
            vec![None]
        } else {
            self.c.iter().cloned().map(Some).collect()
        };
        let etas: Vec<Option<f64>> = if self.eta.is_empty() {
            vec![None]
        } else {
            self.eta.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for s in &seeds {
            for c in &cs {
                for e in &etas {
                    let mut cfg = self.base.clone();
                    if let Some(s) = s {
                        cfg = cfg.with_seed(*s);
                    }
                    if let Some(c) = c {
                        cfg.c_spec = Some(c.clone());
                    }
                    if let Some(e) = e {
                        cfg.schedule = ScheduleSpec::fixed(*e);
                    }
                    out.push(cfg);
                }
            }
        }
        out
    }
}

/// One line of the sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: String,
    pub dataset: String,
    pub c: f64,
    pub eta: f64,
    pub final_log10_clean_loss: f64,
    pub final_log10_adv_loss: f64,
    pub final_norm2: f64,
    pub final_min_clean_margin: f64,
    /// Final alignment error for each reference, in config order.
    pub final_alignment: Vec<(String, f64)>,
    /// Error message when the run failed (other fields are NaN).
    pub error: Option<String>,
}

/// Run every grid point in parallel, each into `out/run-XXX`, then write
/// `out/sweep.json` and `out/sweep.csv`.
pub fn run_sweep(sweep: &SweepConfig, out: &Path, heartbeat: bool) -> Result<Vec<SweepRow>> {
    use rayon::prelude::*;
    ensure_dir(out)?;
    let runs = sweep.expand();
    let rows: Vec<SweepRow> = runs
        .par_iter()
        .enumerate()
        .map(|(k, cfg)| {
            let run = format!("run-{k:03}");
            let dir = out.join(&run);
            match execute(cfg, heartbeat).and_then(|art| write_artifacts(&art, &dir).map(|_| art)) {
                Ok(art) => {
                    let last = art.trace.last();
                    SweepRow {
                        run,
                        dataset: art.dataset.name().to_string(),
                        c: art.model.c(),
                        eta: art.trace.header.schedule.eta,
                        final_log10_clean_loss: last.log10_clean_loss,
                        final_log10_adv_loss: last.log10_adv_loss,
                        final_norm2: last.norm2,
                        final_min_clean_margin: last.min_clean_margin,
                        final_alignment: art
                            .trace
                            .labels()
                            .iter()
                            .zip(&last.align)
                            .map(|(l, e)| ((*l).to_string(), *e))
                            .collect(),
                        error: None,
                    }
                }
                Err(e) => SweepRow {
                    run,
                    dataset: String::new(),
                    c: f64::NAN,
                    eta: f64::NAN,
                    final_log10_clean_loss: f64::NAN,
                    final_log10_adv_loss: f64::NAN,
                    final_norm2: f64::NAN,
                    final_min_clean_margin: f64::NAN,
                    final_alignment: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    write_json(&out.join("sweep.json"), &rows)?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let labels: Vec<String> = sweep.base.references.iter().map(reference_label).collect();
    let mut header: Vec<String> = [
        "run",
        "dataset",
        "c",
        "eta",
        "final_log10_clean_loss",
        "final_log10_adv_loss",
        "final_norm2",
        "final_min_clean_margin",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(labels.iter().map(|l| format!("align_{l}")));
    header.push("error".into());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(&header).map_err(csv_err)?;
    for r in &rows {
        let mut rec = vec![
            r.run.clone(),
            r.dataset.clone(),
            crate::gdat::fmt17(r.c),
            crate::gdat::fmt17(r.eta),
            crate::gdat::fmt17(r.final_log10_clean_loss),
            crate::gdat::fmt17(r.final_log10_adv_loss),
            crate::gdat::fmt17(r.final_norm2),
            crate::gdat::fmt17(r.final_min_clean_margin),
        ];
        for l in &labels {
            let v = r.final_alignment.iter().find(|(k, _)| k == l).map_or(f64::NAN, |(_, v)| *v);
            rec.push(crate::gdat::fmt17(v));
        }
        rec.push(r.error.clone().unwrap_or_default());
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let p = out.join("sweep.csv");
    std::fs::write(&p, bytes).map_err(|e| Error::file(&p, e))?;
    Ok(rows)
}

fn reference_label(r: &ReferenceSpec) -> String {
    match r {
        ReferenceSpec::Named(n) => n.label().to_string(),
        ReferenceSpec::Custom { label, .. } => label.clone(),
    }
}
