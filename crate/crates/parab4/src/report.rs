//! Run-directory persistence: comma-delimited tables, SVG plots, and a
//! machine-readable summary with one pass/fail entry per check.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub subcommand: String,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    /// Named scalar results (empirical constants, fitted exponents, ...).
    pub metrics: Vec<(String, f64)>,
}

impl Summary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// A run directory holding the config copy, tables, plots and summary.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<RunDir> {
        std::fs::create_dir_all(path)?;
        Ok(RunDir {
            path: path.to_path_buf(),
        })
    }

    pub fn save_config_copy(&self, cfg: &crate::config::Config) -> Result<()> {
        let text = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(self.path.join("config.toml"), text)?;
        Ok(())
    }

    /// Comma-delimited table with a header row; numbers are written
    /// with full round-trip precision so identical runs are
    /// bit-identical.
    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<PathBuf> {
        let mut out = String::new();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        let p = self.path.join(name);
        std::fs::write(&p, out)?;
        Ok(p)
    }

    /// Grid-ordered dump of a spatial field: one `x[,y],value` row per node.
    pub fn write_field(&self, name: &str, grid: &crate::grid::Grid, field: &[f64]) -> Result<()> {
        let mut rows = Vec::with_capacity(field.len());
        for idx in 0..field.len() {
            let c = grid.coord(idx);
            if grid.dim == 2 {
                rows.push(vec![c[0], c[1], field[idx]]);
            } else {
                rows.push(vec![c[0], field[idx]]);
            }
        }
        let header: &[&str] = if grid.dim == 2 {
            &["x1", "x2", "value"]
        } else {
            &["x", "value"]
        };
        self.write_csv(name, header, &rows)?;
        Ok(())
    }

    pub fn write_svg(&self, name: &str, plot: &LinePlot) -> Result<()> {
        std::fs::write(self.path.join(name), plot.render())?;
        Ok(())
    }

    pub fn write_summary(&self, summary: &Summary) -> Result<()> {
        #[derive(Serialize)]
        struct Flat<'a> {
            subcommand: &'a str,
            seed: u64,
            passed: bool,
            checks: Vec<FlatCheck<'a>>,
            metrics: std::collections::BTreeMap<String, f64>,
        }
        #[derive(Serialize)]
        struct FlatCheck<'a> {
            name: &'a str,
            passed: bool,
            detail: &'a str,
        }
        let flat = Flat {
            subcommand: &summary.subcommand,
            seed: summary.seed,
            passed: summary.all_passed(),
            checks: summary
                .checks
                .iter()
                .map(|c| FlatCheck {
                    name: &c.name,
                    passed: c.passed,
                    detail: &c.detail,
                })
                .collect(),
            metrics: summary
                .metrics
                .iter()
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        };
        let text = toml::to_string(&flat).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(self.path.join("summary.toml"), text)?;
        // the structured summary is also the machine-readable source for
        // `report`; keep a serde round-trippable copy
        let json_like =
            toml::to_string(summary).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(self.path.join("summary_raw.toml"), json_like)?;
        Ok(())
    }

    pub fn read_summary(&self) -> Result<Summary> {
        let p = self.path.join("summary_raw.toml");
        let text = std::fs::read_to_string(&p).map_err(|_| {
            Error::invalid(format!(
                "run directory {} is incomplete: missing {}",
                self.path.display(),
                p.display()
            ))
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// A minimal SVG line/scatter plot, enough for sweep curves.
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        LinePlot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            log_y: false,
            series: Vec::new(),
        }
    }

    pub fn logx(mut self) -> Self {
        self.log_x = true;
        self
    }

    pub fn logy(mut self) -> Self {
        self.log_y = true;
        self
    }

    pub fn add(&mut self, label: &str, points: Vec<(f64, f64)>) {
        self.series.push((label.into(), points));
    }

    fn map(&self, v: f64, log: bool) -> Option<f64> {
        if log {
            if v > 0.0 {
                Some(v.log10())
            } else {
                None
            }
        } else {
            Some(v)
        }
    }

    pub fn render(&self) -> String {
        let (w, h) = (640.0, 420.0);
        let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (_, pts) in &self.series {
            for &(x, y) in pts {
                if let (Some(a), Some(b)) = (self.map(x, self.log_x), self.map(y, self.log_y)) {
                    xs.push(a);
                    ys.push(b);
                }
            }
        }
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
            w / 2.0,
            self.title
        );
        if xs.is_empty() {
            svg.push_str("</svg>\n");
            return svg;
        }
        let (x0, x1) = span(&xs);
        let (y0, y1) = span(&ys);
        let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
        let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);
        // frame
        let _ = writeln!(
            svg,
            r##"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="#555"/>"##,
            w - ml - mr,
            h - mt - mb
        );
        // axis labels with ranges
        let fmt = |v: f64, log: bool| {
            if log {
                format!("1e{v:.1}")
            } else {
                format!("{v:.3}")
            }
        };
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{} [{} .. {}]</text>"#,
            w / 2.0,
            h - 12.0,
            self.x_label,
            fmt(x0, self.log_x),
            fmt(x1, self.log_x)
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{} [{} .. {}]</text>"#,
            (h - mb + mt) / 2.0,
            (h - mb + mt) / 2.0,
            self.y_label,
            fmt(y0, self.log_y),
            fmt(y1, self.log_y)
        );
        for (k, (label, pts)) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let mapped: Vec<(f64, f64)> = pts
                .iter()
                .filter_map(|&(x, y)| {
                    Some((
                        px(self.map(x, self.log_x)?),
                        py(self.map(y, self.log_y)?),
                    ))
                })
                .collect();
            if mapped.len() > 1 {
                let path: Vec<String> =
                    mapped.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    path.join(" ")
                );
            }
            for (x, y) in &mapped {
                let _ = writeln!(svg, r##"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"##);
            }
            let _ = writeln!(
                svg,
                r##"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{label}</text>"##,
                w - mr - 160.0,
                mt + 16.0 + 16.0 * k as f64
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn span(v: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    (lo, hi)
}

/// Consolidated human-readable report of a completed run directory.
pub fn emit_report(run_dir: &Path) -> Result<String> {
    let dir = RunDir {
        path: run_dir.to_path_buf(),
    };
    let summary = dir.read_summary()?;
    let mut out = String::new();
    let _ = writeln!(out, "run: {}", run_dir.display());
    let _ = writeln!(out, "subcommand: {}  seed: {}", summary.subcommand, summary.seed);
    let _ = writeln!(out, "overall: {}", if summary.all_passed() { "PASS" } else { "FAIL" });
    if !summary.metrics.is_empty() {
        let _ = writeln!(out, "\nmetrics:");
        for (k, v) in &summary.metrics {
            let _ = writeln!(out, "  {k:<42} {v:.6e}");
        }
    }
    let _ = writeln!(out, "\nchecks:");
    for c in &summary.checks {
        let _ = writeln!(
            out,
            "  [{}] {:<42} {}",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let mut tables: Vec<String> = std::fs::read_dir(run_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv") || n.ends_with(".svg"))
        .collect();
    tables.sort();
    if !tables.is_empty() {
        let _ = writeln!(out, "\nartifacts:");
        for t in tables {
            let _ = writeln!(out, "  {t}");
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_round_trip_and_report() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::create(tmp.path()).unwrap();
        let summary = Summary {
            subcommand: "carleman-check".into(),
            seed: 7,
            checks: vec![
                CheckResult::new("alpha_negative", true, "all nodes"),
                CheckResult::new("ordering", true, "d1 < d2 < d3 < d4"),
            ],
            metrics: vec![("c_emp_max".into(), 12.5)],
        };
        dir.write_summary(&summary).unwrap();
        let back = dir.read_summary().unwrap();
        assert!(back.all_passed());
        assert_eq!(back.checks.len(), 2);
        let text = emit_report(tmp.path()).unwrap();
        assert!(text.contains("PASS"));
        assert!(text.contains("c_emp_max"));
    }

    #[test]
    fn empty_dir_reports_incomplete() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(emit_report(tmp.path()).is_err());
    }

    #[test]
    fn csv_written_with_header() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::create(tmp.path()).unwrap();
        dir.write_csv("t.csv", &["s", "c"], &[vec![1.0, 2.0], vec![3.0, 4.0]])
            .unwrap();
        let text = std::fs::read_to_string(tmp.path().join("t.csv")).unwrap();
        assert!(text.starts_with("s,c\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn svg_renders_log_plot() {
        let mut p = LinePlot::new("sweep", "s", "C").logx().logy();
        p.add("max", vec![(1.0, 10.0), (10.0, 5.0), (100.0, 4.0)]);
        let svg = p.render();
        assert!(svg.contains("<svg"));
        assert!(svg.contains("polyline"));
    }
}
