//! Per-step series emission: a CSV for downstream tooling and a
//! standalone SVG for a quick look. No plotting dependencies; the chart
//! is two stacked panels of axis lines and a polyline each.

use std::fs;
use std::path::{Path, PathBuf};

use stepsim_core::sim::SimReport;

use crate::errors::CliError;

const PANEL_W: f64 = 600.0;
const PANEL_H: f64 = 140.0;
const MARGIN: f64 = 40.0;

/// Writes `<stem>[_tag]_series.csv` and `.svg` next to `report_path`.
/// Returns the paths written.
pub fn write_series(
    report: &SimReport,
    report_path: &Path,
    tag: Option<&str>,
) -> Result<Vec<PathBuf>, CliError> {
    let dir = report_path.parent().unwrap_or(Path::new("."));
    let stem = report_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report");
    let suffix = tag.map(|t| format!("_{t}")).unwrap_or_default();
    let csv_path = dir.join(format!("{stem}{suffix}_series.csv"));
    let svg_path = dir.join(format!("{stem}{suffix}_series.svg"));

    let mut csv = String::from("step,makespan_ms,imbalance_ratio\n");
    for (i, m) in report.per_step.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{}\n",
            i + 1,
            m.makespan_ms,
            m.imbalance_ratio
        ));
    }
    fs::write(&csv_path, csv).map_err(|e| CliError::file(&csv_path, &e))?;

    let makespans: Vec<f64> = report.per_step.iter().map(|m| m.makespan_ms).collect();
    let imbalances: Vec<f64> = report.per_step.iter().map(|m| m.imbalance_ratio).collect();
    let width = PANEL_W + 2.0 * MARGIN;
    let height = 2.0 * (PANEL_H + 2.0 * MARGIN);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"12\">\n"
    );
    svg.push_str(&panel(&makespans, "makespan_ms", MARGIN));
    svg.push_str(&panel(
        &imbalances,
        "imbalance_ratio",
        PANEL_H + 3.0 * MARGIN,
    ));
    svg.push_str("</svg>\n");
    fs::write(&svg_path, svg).map_err(|e| CliError::file(&svg_path, &e))?;

    Ok(vec![csv_path, svg_path])
}

fn panel(values: &[f64], label: &str, top: f64) -> String {
    let peak = values.iter().cloned().fold(0.0f64, f64::max).max(1e-9);
    let n = values.len();
    let step_x = if n > 1 { PANEL_W / (n - 1) as f64 } else { 0.0 };
    let points: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = MARGIN + i as f64 * step_x;
            let y = top + PANEL_H - (v / peak) * PANEL_H;
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let bottom = top + PANEL_H;
    let right = MARGIN + PANEL_W;
    format!(
        "<g>\n\
         <text x=\"{MARGIN}\" y=\"{ty:.2}\">{label} (peak {peak})</text>\n\
         <line x1=\"{MARGIN}\" y1=\"{top:.2}\" x2=\"{MARGIN}\" y2=\"{bottom:.2}\" stroke=\"#999\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{bottom:.2}\" x2=\"{right:.2}\" y2=\"{bottom:.2}\" stroke=\"#999\"/>\n\
         <polyline fill=\"none\" stroke=\"#4477aa\" stroke-width=\"1.5\" points=\"{pts}\"/>\n\
         </g>\n",
        ty = top - 8.0,
        pts = points.join(" ")
    )
}
