use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{ExperimentOutput, ExperimentReport, ReplicateRecord};
use crate::error::{Error, Result};

/// Paths written by [`emit_outputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFiles {
    pub records: PathBuf,
    pub report: PathBuf,
    pub scatter: PathBuf,
    pub plots: Vec<PathBuf>,
}

#[derive(Serialize)]
struct ScatterRow<'a> {
    cell: &'a str,
    replicate: usize,
    rho0: f64,
    rho_u: f64,
}

/// Writes `records.csv`, `report.json`, `scatter.csv` and, if `plots` is
/// set, one `scatter_<cell>.svg` per cell into `out_dir` (created if needed).
pub fn emit_outputs(output: &ExperimentOutput, out_dir: &Path, plots: bool) -> Result<OutputFiles> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let records = out_dir.join("records.csv");
    let mut wtr = csv::Writer::from_path(&records)?;
    for r in &output.records {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io(&records, e))?;

    let report = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&output.report)?;
    fs::write(&report, json).map_err(|e| Error::io(&report, e))?;

    let scatter = out_dir.join("scatter.csv");
    let mut wtr = csv::Writer::from_path(&scatter)?;
    let mut plot_files = Vec::new();
    for cell in &output.report.cells {
        let label = cell.label();
        let points: Vec<&ReplicateRecord> = output
            .records
            .iter()
            .filter(|r| r.model == cell.model && r.scheme == cell.scheme && r.rho_u.is_some())
            .collect();
        for r in &points {
            wtr.serialize(ScatterRow {
                cell: &label,
                replicate: r.replicate,
                rho0: r.rho0,
                rho_u: r.rho_u.expect("filtered"),
            })?;
        }
        if plots {
            let path = out_dir.join(format!("scatter_{label}.svg"));
            let pairs: Vec<(f64, f64)> = points.iter().map(|r| (r.rho0, r.rho_u.expect("filtered"))).collect();
            fs::write(&path, render_scatter_svg(&label, &pairs)).map_err(|e| Error::io(&path, e))?;
            plot_files.push(path);
        }
    }
    if output.records.iter().all(|r| r.rho_u.is_none()) {
        wtr.write_record(["cell", "replicate", "rho0", "rho_u"])?;
    }
    wtr.flush().map_err(|e| Error::io(&scatter, e))?;

    Ok(OutputFiles {
        records,
        report,
        scatter,
        plots: plot_files,
    })
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// `(rho0, rho_u)` scatter with the `y = x` diagonal. Both axes span
/// `[lo, 1]`, where `lo` is just below the smallest value shown.
pub fn render_scatter_svg(title: &str, pairs: &[(f64, f64)]) -> String {
    const SIZE: f64 = 400.0;
    const MARGIN: f64 = 50.0;
    let smallest = pairs.iter().flat_map(|&(a, b)| [a, b]).fold(1.0_f64, f64::min);
    let lo = ((smallest - 0.05) * 10.0).floor() / 10.0;
    let lo = lo.clamp(-1.0, 0.9);
    let span = 1.0 - lo;
    let x = |v: f64| MARGIN + (v - lo) / span * SIZE;
    let y = |v: f64| MARGIN + SIZE - (v - lo) / span * SIZE;
    let total = SIZE + 2.0 * MARGIN;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="grey" stroke-dasharray="4 4"/>"#,
        x(lo),
        y(lo),
        x(1.0),
        y(1.0)
    );
    for &(a, b) in pairs {
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, x(a), y(b));
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="30" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>"#,
        total / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">rho0</text>"#,
        total / 2.0,
        total - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 15 {})">rho_u</text>"#,
        total / 2.0,
        total / 2.0
    );
    for (v, anchor) in [(lo, "start"), (1.0, "end")] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-family="sans-serif" font-size="10">{v:.1}</text>"#,
            x(v),
            MARGIN + SIZE + 14.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
