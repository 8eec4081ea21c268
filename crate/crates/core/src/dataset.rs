//! Labeled binary-classification datasets.
//!
//! A dataset is `n` points in `R^d` with labels in `{-1, +1}`. The signed
//! points `z_i = y_i x_i` are what every loss and margin in this crate is
//! written in terms of; they are computed on demand rather than stored.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::margins;
use crate::perturbation::Exponent;
use crate::vecops::{dot, norm2};

/// Solved ℓ2 margins at or below this value are reported as non-separable.
pub const SEPARABILITY_TOL: f64 = 1e-8;

pub const BUILTIN_NAMES: [&str; 2] = ["paper-4pt", "paper-counterexample"];

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    name: String,
    dim: usize,
    /// Row-major `n x d`.
    points: Vec<f64>,
    labels: Vec<f64>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, points: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::Validation("dataset has no samples".into()));
        }
        if labels.len() != n {
            return Err(Error::Validation(format!(
                "{} points but {} labels",
                n,
                labels.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::Validation("points have dimension 0".into()));
        }
        let mut flat = Vec::with_capacity(n * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Validation(format!(
                    "sample {i} has {} features, expected {dim}",
                    p.len()
                )));
            }
            if let Some(v) = p.iter().find(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("sample {i} has non-finite entry {v}")));
            }
            flat.extend_from_slice(p);
        }
        for (i, &y) in labels.iter().enumerate() {
            if y != 1.0 && y != -1.0 {
                return Err(Error::Validation(format!(
                    "sample {i} has label {y}, expected -1 or 1"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            points: flat,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// `z_i = y_i x_i`.
    pub fn signed_point(&self, i: usize) -> Vec<f64> {
        let y = self.labels[i];
        self.point(i).iter().map(|x| y * x).collect()
    }

    pub fn signed_points(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.signed_point(i)).collect()
    }

    /// `y_i x_i^T theta`, without materializing `z_i`.
    pub fn signed_margin(&self, i: usize, theta: &[f64]) -> f64 {
        self.labels[i] * dot(self.point(i), theta)
    }

    pub fn max_point_norm(&self) -> f64 {
        (0..self.n())
            .map(|i| norm2(self.point(i)))
            .fold(0.0, f64::max)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Every coordinate multiplied by `s`; labels unchanged.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            name: self.name.clone(),
            dim: self.dim,
            points: self.points.iter().map(|x| x * s).collect(),
            labels: self.labels.clone(),
        }
    }

    /// CSV text in the on-disk format: header `x1,...,xd,y`, shortest
    /// round-trip decimal representation for every value.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 1..=self.dim {
            let _ = write!(out, "x{j},");
        }
        out.push_str("y\n");
        for i in 0..self.n() {
            for v in self.point(i) {
                let _ = write!(out, "{v:?},");
            }
            let _ = writeln!(out, "{}", if self.labels[i] > 0.0 { "1" } else { "-1" });
        }
        out
    }

    pub fn from_csv(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        let mut width: Option<usize> = None;
        let mut seen_first = false;
        for (idx, raw) in text.split('\n').enumerate() {
            let line_no = idx + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw).trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: Vec<Option<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
            if !seen_first {
                seen_first = true;
                if parsed.iter().any(Option::is_none) {
                    // header row
                    if fields.len() < 2 {
                        return Err(Error::Parse {
                            line: line_no,
                            message: "header needs at least one feature column and a label column"
                                .into(),
                        });
                    }
                    width = Some(fields.len());
                    continue;
                }
            }
            let expected = *width.get_or_insert(fields.len());
            if fields.len() != expected {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {expected} fields, found {}", fields.len()),
                });
            }
            if expected < 2 {
                return Err(Error::Parse {
                    line: line_no,
                    message: "row needs at least one feature and a label".into(),
                });
            }
            let mut row = Vec::with_capacity(expected - 1);
            for (f, v) in fields.iter().zip(&parsed) {
                match v {
                    Some(v) => row.push(*v),
                    None => {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("`{f}` is not a number"),
                        })
                    }
                }
            }
            let y = row.pop().expect("width >= 2");
            if y != 1.0 && y != -1.0 {
                return Err(Error::Validation(format!(
                    "line {line_no}: label {y} is not -1 or 1"
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite feature {v}"),
                });
            }
            points.push(row);
            labels.push(y);
        }
        if points.is_empty() {
            return Err(Error::Validation("no data rows".into()));
        }
        Self::new(name, points, labels)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::file(path, e))
    }
}

/// Datasets compiled into the crate.
pub fn builtin(name: &str) -> Result<LabeledDataset> {
    match name {
        "paper-4pt" => LabeledDataset::new(
            name,
            vec![
                vec![-0.5, 1.0],
                vec![-0.5, -1.0],
                vec![-0.75, -1.0],
                vec![2.0, 1.0],
            ],
            vec![1.0, -1.0, -1.0, 1.0],
        ),
        "paper-counterexample" => LabeledDataset::new(
            name,
            vec![vec![10.0, 1.0], vec![-10.0, -1.0]],
            vec![1.0, -1.0],
        ),
        other => Err(Error::UnknownBuiltin(other.to_string())),
    }
}

/// Resolve a builtin name or a CSV path.
pub fn load_dataset(source: &str) -> Result<LabeledDataset> {
    if BUILTIN_NAMES.contains(&source) {
        return builtin(source);
    }
    let path = Path::new(source);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| source.to_string());
        return LabeledDataset::from_csv(name, &text);
    }
    let looks_like_path = source.contains(['/', '\\']) || source.ends_with(".csv");
    if looks_like_path {
        Err(Error::file(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    } else {
        Err(Error::UnknownBuiltin(source.to_string()))
    }
}

/// Random linearly separable data inside the unit ball.
///
/// Points are drawn uniformly from the unit ball and labeled by a coin flip;
/// any point on the wrong side of a random hyperplane (or closer to it than
/// `target_margin`) is reflected across it and pushed out to distance at
/// least `target_margin`, shrinking its in-plane component if needed so the
/// norm stays at most one.
pub fn generate_separable(seed: u64, n: usize, d: usize, target_margin: f64) -> Result<LabeledDataset> {
    if n < 2 {
        return Err(Error::Construction(format!("n = {n}, need at least 2 samples")));
    }
    if d < 1 {
        return Err(Error::Construction("dimension must be at least 1".into()));
    }
    if !(target_margin > 0.0 && target_margin < 1.0) {
        return Err(Error::Construction(format!(
            "target margin {target_margin} must lie in (0, 1) for points in the unit ball"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let nrm = norm2(&g);
        if nrm > 1e-12 {
            break g.iter().map(|x| x / nrm).collect::<Vec<f64>>();
        }
    };
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sample_unit_ball(&mut rng, d);
        let y: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let s = dot(&x, &w);
        let mut r: Vec<f64> = x.iter().zip(&w).map(|(xi, wi)| xi - s * wi).collect();
        // signed offset along w, at least target_margin on the label's side
        let along = y * (target_margin + s.abs() * (1.0 - target_margin));
        let room = (1.0 - along * along).max(0.0).sqrt();
        let rn = norm2(&r);
        if rn > room {
            let f = if rn > 0.0 { room / rn } else { 0.0 };
            r.iter_mut().for_each(|v| *v *= f);
        }
        let p: Vec<f64> = r.iter().zip(&w).map(|(ri, wi)| ri + along * wi).collect();
        points.push(p);
        labels.push(y);
    }
    LabeledDataset::new(format!("separable-s{seed}-n{n}-d{d}"), points, labels)
}

fn sample_unit_ball(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let nrm = norm2(&g);
        if nrm > 1e-12 {
            let u: f64 = rng.random();
            let r = u.powf(1.0 / d as f64);
            return g.iter().map(|x| x * r / nrm).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparabilityReport {
    pub separable: bool,
    /// Max-margin direction when separable.
    pub witness: Option<Vec<f64>>,
    /// `min_i y_i x_i^T u` at the solved ℓ2 max-margin direction.
    pub min_margin: f64,
}

pub fn check_separability(ds: &LabeledDataset) -> SeparabilityReport {
    let cert = margins::max_margin(ds, Exponent::TWO).expect("q = 2 is a valid exponent");
    let separable = cert.gamma > SEPARABILITY_TOL;
    SeparabilityReport {
        separable,
        witness: separable.then(|| cert.u.clone()),
        min_margin: cert.gamma,
    }
}

/// Shrink the data into the unit ℓ2 ball. Returns the factor applied; data
/// already inside the ball is returned unchanged with factor 1.
pub fn rescale_to_unit_ball(ds: &LabeledDataset) -> Result<(LabeledDataset, f64)> {
    let m = ds.max_point_norm();
    if m == 0.0 {
        return Err(Error::Degenerate("every point is the origin".into()));
    }
    if m <= 1.0 {
        return Ok((ds.clone(), 1.0));
    }
    let scale = 1.0 / m;
    let out = ds.scaled(scale).with_name(format!("{}-unit", ds.name()));
    Ok((out, scale))
}
