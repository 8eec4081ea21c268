//! Numeric CSV tables and deterministic SVG line plots.
//!
//! Plots are derived artifacts: they are always rendered from CSV files that
//! were written first, and identical inputs give identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A CSV file whose cells all parse as reals (`inf`, `-inf`, `NaN` allowed).
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let columns: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_error(&e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if columns.iter().all(String::is_empty) {
            return Err(Error::InsufficientData("CSV has no header".into()));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(&e))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let row = rec
                .iter()
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("`{cell}` is not a number"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::InsufficientData("CSV has no data rows".into()));
        }
        Ok(Self { columns, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }
}

fn csv_error(e: &csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// One polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Axis and title settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Base-10 logarithmic x axis (non-positive abscissae are dropped).
    pub log_x: bool,
    /// Base-10 logarithmic y axis (non-positive ordinates are dropped).
    pub log_y: bool,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Render series to a standalone SVG document.
pub fn render_svg(series: &[Series], spec: &PlotSpec) -> Result<String> {
    let tx = |v: f64| if spec.log_x { v.log10() } else { v };
    let ty = |v: f64| if spec.log_y { v.log10() } else { v };
    let mut pts: Vec<Vec<(f64, f64)>> = Vec::with_capacity(series.len());
    for s in series {
        if s.x.len() != s.y.len() {
            return Err(Error::Validation(format!(
                "series `{}` has {} abscissae and {} ordinates",
                s.label,
                s.x.len(),
                s.y.len()
            )));
        }
        pts.push(
            s.x.iter()
                .zip(&s.y)
                .map(|(&x, &y)| (tx(x), ty(y)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect(),
        );
    }
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(Error::InsufficientData("no finite points to plot".into()));
    }
    if x1 == x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            out,
            r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#333"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 19.0,
            tick_label(xv, spec.log_x)
        );
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0,
            tick_label(yv, spec.log_y)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(&axis_label(&spec.x_label, spec.log_x))
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&axis_label(&spec.y_label, spec.log_y))
    );
    for (k, (s, p)) in series.iter().zip(&pts).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut path = String::new();
        for (x, y) in p {
            let _ = write!(path, "{:.2},{:.2} ", sx(*x), sy(*y));
        }
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.trim_end()
        );
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{v:.1}")
    } else if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn axis_label(label: &str, log: bool) -> String {
    if log {
        format!("{label} (log scale)")
    } else {
        label.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Plot `columns` against `x` from every CSV in `inputs` and write the SVG.
///
/// Series are labeled `<file stem>:<column>` when more than one file is
/// given. Nothing is written when any input is empty or lacks a column.
pub fn render_plot(inputs: &[&Path], x: &str, columns: &[&str], out_svg: &Path, spec: &PlotSpec) -> Result<()> {
    if inputs.is_empty() || columns.is_empty() {
        return Err(Error::Config("a plot needs at least one CSV and one column".into()));
    }
    let mut series = Vec::new();
    for path in inputs {
        let table = CsvTable::read(path)?;
        let xs = table.column(x)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for col in columns {
            let label = if inputs.len() > 1 { format!("{stem}:{col}") } else { (*col).to_string() };
            series.push(Series {
                label,
                x: xs.clone(),
                y: table.column(col)?,
            });
        }
    }
    let svg = render_svg(&series, spec)?;
    std::fs::write(out_svg, svg).map_err(|e| Error::file(out_svg, e))
}
