//! CSV and JSON writers. Reals are written in scientific notation with 17
//! significant digits so that every value round-trips.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use stmg_core::driver::{eoc, ProbeSeries, RunReport, SectionTimes};

/// Bumped whenever a CSV column changes.
pub const CSV_SCHEMA: u32 = 1;

pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_real(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))
}

#[derive(Serialize)]
pub struct Document<'a, C: Serialize> {
    pub version: &'static str,
    pub git_revision: &'static str,
    pub command: &'a str,
    pub csv_schema: u32,
    pub config: &'a C,
    pub converged: bool,
    pub runs: &'a [RunReport],
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(doc)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_eoc(path: &Path, runs: &[RunReport]) -> Result<()> {
    let pick = |f: fn(&RunReport) -> Option<f64>| runs.iter().map(f).collect::<Vec<_>>();
    let rates = |errs: Vec<Option<f64>>| -> Vec<Option<f64>> {
        match errs.iter().copied().collect::<Option<Vec<f64>>>() {
            Some(e) => eoc(&e),
            None => vec![None; errs.len()],
        }
    };
    let eoc_u = rates(pick(|r| r.errors_u.map(|e| e.l2_l2)));
    let eoc_v = rates(pick(|r| r.errors_v.map(|e| e.l2_l2)));
    let mut w = writer(path)?;
    w.write_record([
        "r",
        "spatial_dofs",
        "total_dofs",
        "n_steps",
        "linf_linf_u",
        "l2_l2_u",
        "linf_l2_u",
        "eoc_l2_l2_u",
        "linf_linf_v",
        "l2_l2_v",
        "linf_l2_v",
        "eoc_l2_l2_v",
        "mean_iterations",
        "work",
    ])?;
    for (i, r) in runs.iter().enumerate() {
        let (u, v) = (r.errors_u, r.errors_v);
        w.write_record([
            r.refinements.to_string(),
            r.spatial_dofs.to_string(),
            r.total_dofs.to_string(),
            r.n_steps.to_string(),
            opt_real(u.map(|e| e.linf_linf)),
            opt_real(u.map(|e| e.l2_l2)),
            opt_real(u.map(|e| e.linf_l2)),
            opt_real(eoc_u[i]),
            opt_real(v.map(|e| e.linf_linf)),
            opt_real(v.map(|e| e.l2_l2)),
            opt_real(v.map(|e| e.linf_l2)),
            opt_real(eoc_v[i]),
            real(r.mean_iterations),
            real(r.work),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_probes(path: &Path, probes: &ProbeSeries) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=probes.points.len()).map(|i| format!("u(x{i})")));
    w.write_record(&header)?;
    for (j, t) in probes.times.iter().enumerate() {
        let mut row = vec![real(*t)];
        row.extend(probes.values.iter().map(|v| real(v[j])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sections(path: &Path, s: &SectionTimes) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["section", "seconds", "share"])?;
    let total = s.total.max(f64::MIN_POSITIVE);
    for (name, v) in SectionTimes::NAMES.iter().zip(s.values()) {
        w.write_record([name.to_string(), real(v), real(v / total)])?;
    }
    w.write_record(["Total".to_string(), real(s.total), real(1.0)])?;
    w.flush()?;
    Ok(())
}

/// One row per step and temporal unknown: `step, i, u_0, …, u_{n_x−1}`.
pub fn write_trajectory(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = writer(path)?;
    let n_x = report.spatial_dofs;
    let mut header = vec!["step".to_string(), "i".to_string()];
    header.extend((0..n_x).map(|d| format!("u{d}")));
    w.write_record(&header)?;
    for (s, step) in report.trajectory.iter().enumerate() {
        for (i, block) in step.chunks(n_x).enumerate() {
            let mut row = vec![s.to_string(), i.to_string()];
            row.extend(block.iter().map(|v| real(*v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
