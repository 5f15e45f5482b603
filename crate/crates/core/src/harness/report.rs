//! `report`: comparison table and architecture-trajectory plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::run::{mean_std, read_json, RunSummary, MANIFEST, SUMMARY};
use crate::error::{Error, Result};

pub const REPORT_MD: &str = "report.md";
pub const TRAJECTORY_SVG: &str = "trajectory.svg";

/// Recursion limit when searching for run directories.
const MAX_DEPTH: usize = 3;

/// Finds completed runs under `root`. Directories that look like runs but
/// lack a readable summary or manifest are skipped with a warning.
pub fn collect_runs(root: &Path) -> Result<Vec<(PathBuf, RunSummary)>> {
    let mut out = Vec::new();
    visit(root, 0, &mut out)?;
    Ok(out)
}

fn visit(dir: &Path, depth: usize, out: &mut Vec<(PathBuf, RunSummary)>) -> Result<()> {
    let summary = dir.join(SUMMARY);
    let is_run = dir
        .file_name()
        .is_some_and(|n| n.to_string_lossy().starts_with("seed-"));
    if is_run {
        match read_json::<RunSummary>(&summary) {
            Ok(s) if dir.join(MANIFEST).is_file() => out.push((dir.to_path_buf(), s)),
            Ok(_) => log::warn!("{}: no manifest, skipping incomplete run", dir.display()),
            Err(e) => log::warn!("{}: skipping incomplete run ({e})", dir.display()),
        }
        return Ok(());
    }
    if depth >= MAX_DEPTH {
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for p in entries {
        visit(&p, depth + 1, out)?;
    }
    Ok(())
}

/// One table row: all seeds of one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub config_hash: String,
    pub runs: Vec<RunSummary>,
}

impl ReportRow {
    pub fn test_errors(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.test_error).collect()
    }
}

/// Groups runs by configuration hash, refusing to mix datasets.
pub fn group_runs(runs: Vec<RunSummary>) -> Result<Vec<ReportRow>> {
    let Some(first) = runs.first() else {
        return Err(Error::Invalid("no completed runs to report".into()));
    };
    let dataset = first.dataset_hash.clone();
    if let Some(bad) = runs.iter().find(|r| r.dataset_hash != dataset) {
        return Err(Error::Invalid(format!(
            "refusing to aggregate runs over different datasets ({} vs {} in {} seed {})",
            &dataset[..12.min(dataset.len())],
            &bad.dataset_hash[..12.min(bad.dataset_hash.len())],
            bad.name,
            bad.seed
        )));
    }
    let mut rows: BTreeMap<(String, String), Vec<RunSummary>> = BTreeMap::new();
    for r in runs {
        rows.entry((r.name.clone(), r.config_hash.clone())).or_default().push(r);
    }
    Ok(rows
        .into_iter()
        .map(|((name, config_hash), mut runs)| {
            runs.sort_by_key(|r| r.seed);
            ReportRow {
                name,
                config_hash,
                runs,
            }
        })
        .collect())
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Markdown comparison table, one row per configuration.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    s.push_str("| config | kd | weights | generator | seeds | test error % | params |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for row in rows {
        let r0 = &row.runs[0];
        let errs = row.test_errors();
        let err = match mean_std(&errs) {
            (Some(m), Some(sd)) => format!("{} ± {}", pct(m), pct(sd)),
            (Some(m), None) => pct(m),
            _ => "n/a".into(),
        };
        let params = row.runs.iter().map(|r| r.total_params as f64).sum::<f64>() / row.runs.len() as f64;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {:.0} |",
            row.name,
            config_name(&r0.kd_mode),
            config_name(&r0.weight_mode),
            config_name(&r0.generator),
            row.runs.len(),
            err,
            params
        );
    }
    s
}

/// The spelling a unit enum has in config files.
fn config_name<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => "?".into(),
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Depth-versus-width scatter of the selected architectures, one point
/// per member in selection order, joined per run.
pub fn render_trajectory(rows: &[ReportRow]) -> String {
    let (w, h, pad) = (640.0, 480.0, 60.0);
    let points = rows.iter().flat_map(|r| &r.runs).flat_map(|r| &r.members);
    let (mut dmax, mut wmax) = (1usize, 1usize);
    for m in points {
        dmax = dmax.max(m.arch.depth);
        wmax = wmax.max(m.arch.width);
    }
    let sx = |d: usize| pad + (w - 2.0 * pad) * d as f64 / (dmax + 1) as f64;
    let sy = |v: usize| h - pad - (h - 2.0 * pad) * v as f64 / (wmax as f64 * 1.1);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{y}" stroke="black"/>"#,
        y = h - pad,
        x2 = w - pad
    );
    for d in 0..=dmax + 1 {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{d}</text>"#,
            sx(d),
            h - pad + 16.0
        );
    }
    for k in 0..=4 {
        let v = wmax * k / 4;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#,
            pad - 6.0,
            sy(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">depth (cells)</text>"#,
        w / 2.0,
        h - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">width (channels)</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (ci, row) in rows.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        for run in &row.runs {
            let pts: Vec<String> = run
                .members
                .iter()
                .map(|m| format!("{:.1},{:.1}", sx(m.arch.depth), sy(m.arch.width)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-opacity="0.4"/>"#,
                pts.join(" ")
            );
            for (k, m) in run.members.iter().enumerate() {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{color}"><title>{} seed {} member {}: {}</title></circle>"#,
                    sx(m.arch.depth),
                    sy(m.arch.width),
                    row.name,
                    run.seed,
                    k + 1,
                    m.arch
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            w - pad - 120.0,
            pad + 16.0 * ci as f64,
            row.name
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Reads runs under `dirs`, writes `report.md` and `trajectory.svg` into
/// `out`, and returns the table rows.
pub fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<Vec<ReportRow>> {
    let mut runs = Vec::new();
    for d in dirs {
        runs.extend(collect_runs(d)?.into_iter().map(|(_, s)| s));
    }
    let rows = group_runs(runs)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut md = String::from("# Ensemble search report\n\n");
    md.push_str(&render_table(&rows));
    md.push_str("\nSelected architectures per run: `trajectory.svg`.\n");
    let md_path = out.join(REPORT_MD);
    fs::write(&md_path, md).map_err(|e| Error::io(&md_path, e))?;
    let svg_path = out.join(TRAJECTORY_SVG);
    fs::write(&svg_path, render_trajectory(&rows)).map_err(|e| Error::io(&svg_path, e))?;
    Ok(rows)
}
