//! Plot data as CSV plus a dependency-free SVG rendering of that CSV.
//!
//! Every plot is a list of `(series, x, y)` points. The CSV is the source
//! of truth: [`render_svg`] only ever sees points parsed back from it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::battery_data::CellRecord;
use crate::error::{Error, Result};
use crate::labels::soh_per_cycle;
use crate::pipeline::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    Degradation,
    VoltageCurves,
    PredVsTruth,
}

impl PlotKind {
    fn axes(self) -> (&'static str, &'static str) {
        match self {
            PlotKind::Degradation => ("cycle", "SOH (%)"),
            PlotKind::VoltageCurves => ("discharge capacity (Ah)", "voltage (V)"),
            PlotKind::PredVsTruth => ("true", "predicted"),
        }
    }

    fn scatter(self) -> bool {
        self == PlotKind::PredVsTruth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub series: String,
    pub x: f64,
    pub y: f64,
}

/// SOH against cycle number, one series per cell.
pub fn degradation_points(cells: &[CellRecord]) -> Result<Vec<PlotPoint>> {
    let mut out = Vec::new();
    for cell in cells {
        let soh = soh_per_cycle(cell)?;
        for (c, s) in cell.cycle_data.iter().zip(soh) {
            out.push(PlotPoint { series: cell.cell_id.clone(), x: c.cycle_number as f64, y: s });
        }
    }
    Ok(out)
}

/// Discharge voltage against discharged capacity for up to `max_curves`
/// evenly spaced cycles of each cell.
pub fn voltage_curve_points(cells: &[CellRecord], max_curves: usize) -> Vec<PlotPoint> {
    let mut out = Vec::new();
    for cell in cells {
        let n = cell.cycle_data.len();
        let k = max_curves.clamp(1, n.max(1));
        let picks: Vec<usize> = if k >= n { (0..n).collect() } else { (0..k).map(|j| j * (n - 1) / (k - 1).max(1)).collect() };
        for i in picks {
            let c = &cell.cycle_data[i];
            let series = format!("{}:{}", cell.cell_id, c.cycle_number);
            for ((&v, &q), &a) in c.voltage_in_V.iter().zip(&c.discharge_capacity_in_Ah).zip(&c.current_in_A) {
                if a < 0.0 {
                    out.push(PlotPoint { series: series.clone(), x: q, y: v });
                }
            }
        }
    }
    out
}

/// One point per test row, with the prediction averaged over seeds.
pub fn pred_vs_truth_points(report: &EvalReport) -> Vec<PlotPoint> {
    let mut groups: BTreeMap<(String, Option<u32>, Option<usize>), (f64, f64, usize)> = BTreeMap::new();
    for p in &report.predictions {
        let e = groups.entry((p.cell_id.clone(), p.cycle, p.step)).or_insert((p.y_true, 0.0, 0));
        e.1 += p.y_pred;
        e.2 += 1;
    }
    groups
        .into_iter()
        .map(|((cell, cycle, step), (t, sum, n))| {
            let mut series = cell;
            if let Some(c) = cycle {
                write!(series, ":{c}").unwrap();
            }
            if let Some(s) = step {
                write!(series, ":{s}").unwrap();
            }
            PlotPoint { series, x: t, y: sum / n as f64 }
        })
        .collect()
}

pub fn points_to_csv(points: &[PlotPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).map_err(|e| Error::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn points_from_csv(text: &str) -> Result<Vec<PlotPoint>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<PlotPoint>, _>>()
        .map_err(|e| Error::Csv(e.to_string()))
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 70.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Renders points as polylines (one per series) or, for predictions, as a
/// scatter with the identity line.
pub fn render_svg(kind: PlotKind, points: &[PlotPoint]) -> String {
    let (mut x0, mut x1) = span(points.iter().map(|p| p.x));
    let (mut y0, mut y1) = span(points.iter().map(|p| p.y));
    if kind.scatter() {
        x0 = x0.min(y0);
        y0 = x0;
        x1 = x1.max(y1);
        y1 = x1;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let (xl, yl) = kind.axes();

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">"#).unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    writeln!(s, r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" fill="none" stroke="black"/>"#).unwrap();
    writeln!(s, r#"<text x="{left}" y="{}" font-size="12">{x0:.4}</text>"#, bottom + 18.0).unwrap();
    writeln!(s, r#"<text x="{right}" y="{}" font-size="12" text-anchor="end">{x1:.4}</text>"#, bottom + 18.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{bottom}" font-size="12" text-anchor="end">{y0:.4}</text>"#, left - 6.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{y1:.4}</text>"#, left - 6.0, top + 4.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{xl}</text>"#, WIDTH / 2.0, HEIGHT - 20.0).unwrap();
    writeln!(s, r#"<text x="20" y="{}" font-size="14" text-anchor="middle" transform="rotate(-90 20 {})">{yl}</text>"#, HEIGHT / 2.0, HEIGHT / 2.0).unwrap();

    if kind.scatter() {
        writeln!(s, r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 4"/>"##, sx(x0), sy(y0), sx(x1), sy(y1)).unwrap();
        for p in points {
            writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"><title>{}</title></circle>"#, sx(p.x), sy(p.y), PALETTE[0], xml_escape(&p.series)).unwrap();
        }
    } else {
        let mut order: Vec<&str> = Vec::new();
        let mut series: BTreeMap<&str, Vec<&PlotPoint>> = BTreeMap::new();
        for p in points {
            let entry = series.entry(&p.series).or_default();
            if entry.is_empty() {
                order.push(&p.series);
            }
            entry.push(p);
        }
        for (i, name) in order.iter().enumerate() {
            let pts: Vec<String> = series[name].iter().map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.y))).collect();
            writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.2"><title>{}</title></polyline>"#,
                pts.join(" "),
                PALETTE[i % PALETTE.len()],
                xml_escape(name)
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<out>.csv` and `<out>.svg`, the SVG rendered from the CSV text.
pub fn write_plot(kind: PlotKind, points: &[PlotPoint], out: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv_path = out.with_extension("csv");
    let svg_path = out.with_extension("svg");
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = points_to_csv(points)?;
    fs::write(&csv_path, &text).map_err(|e| Error::io(&csv_path, e))?;
    let svg = render_svg(kind, &points_from_csv(&text)?);
    fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
    Ok((csv_path, svg_path))
}
