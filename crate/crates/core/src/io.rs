//! CSV and JSON emission: curves with sidecar manifests, generic tables, and
//! tabulated-energy loading.
//!
//! CSV bodies are deterministic: shortest-roundtrip float formatting and no
//! timestamps (run timing lives only in the run manifest).

use crate::energy::EnergyField;
use crate::error::{GradFlowError, Result};
use crate::flow::{Curve, CurveKind};
use std::fmt::Write as _;
use std::path::Path;

pub fn format_cell(v: f64) -> String {
    if v.is_finite() {
        format!("{}", v)
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Renders a table with the given header; every row must match its width.
pub fn render_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    std::fs::write(path, render_csv(header, rows))?;
    Ok(())
}

/// Curve body: header `t,x1..xd`, one row per sample.
pub fn render_curve_csv(curve: &Curve) -> String {
    let dim = curve.dim();
    let mut out = String::new();
    out.push('t');
    for i in 1..=dim {
        let _ = write!(out, ",x{}", i);
    }
    out.push('\n');
    for (t, p) in curve.times().iter().zip(curve.values()) {
        out.push_str(&format_cell(*t));
        for i in 0..dim {
            out.push(',');
            out.push_str(&format_cell(p[i]));
        }
        out.push('\n');
    }
    out
}

/// Writes `<path>` and the interpolation contract next to it in
/// `<path>.manifest.json`.
pub fn write_curve_csv(path: &Path, curve: &Curve) -> Result<()> {
    std::fs::write(path, render_curve_csv(curve))?;
    let kind = match curve.kind() {
        CurveKind::Continuous { max_dt } => {
            serde_json::json!({"kind": "continuous", "max_dt": max_dt})
        }
        CurveKind::PiecewiseConstant { tau } => {
            serde_json::json!({"kind": "piecewise-constant", "tau": tau})
        }
    };
    let manifest = serde_json::json!({
        "interpolation": kind,
        "samples": curve.times().len(),
        "horizon": curve.horizon(),
        "dim": curve.dim(),
    });
    let mut mpath = path.as_os_str().to_owned();
    mpath.push(".manifest.json");
    std::fs::write(mpath, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Loads a 1-D tabulated energy from CSV rows `x,phi,grad`.
pub fn load_tabulated_energy(path: &Path) -> Result<EnergyField> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| GradFlowError::input("empty energy table"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() != 3 || cols[0] != "x" || cols[1] != "phi" || cols[2] != "grad" {
        return Err(GradFlowError::input(format!(
            "energy table header must be `x,phi,grad` (1-D only), got `{}`",
            header
        )));
    }
    let mut xs = Vec::new();
    let mut phi = Vec::new();
    let mut grad = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(GradFlowError::input(format!("table row {} malformed", ln + 2)));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| GradFlowError::input(format!("row {}: {}", ln + 2, e)))
        };
        xs.push(parse(parts[0])?);
        phi.push(parse(parts[1])?);
        grad.push(parse(parts[2])?);
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "table".into());
    EnergyField::tabulated(&format!("table:{}", label), xs, phi, grad)
}
