use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::BenchError;

/// What the SVG for a report shows.
#[derive(Debug, Clone, PartialEq)]
pub enum Chart {
    /// Histograms of `log10` of the named columns.
    Histogram { series: Vec<String>, bins: usize },
    /// Median of each named column against the distinct values of `x`
    /// (log-scaled y axis).
    MedianCurves { x: String, series: Vec<String> },
}

/// Result table of one experiment. Missing values (failed solves) are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub summary: Vec<(String, f64)>,
    pub chart: Chart,
}

impl ExperimentReport {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn summary_value(&self, name: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
    }
}

/// Writes `<name>.csv` (one row per record), `<name>_summary.csv`
/// (`metric,value`) and `<name>.svg` into `dir`, returning the paths.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    std::fs::create_dir_all(dir)?;
    let data = dir.join(format!("{}.csv", report.name));
    let mut w = csv::Writer::from_path(&data)?;
    w.write_record(&report.columns)?;
    for row in &report.rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;

    let summary = dir.join(format!("{}_summary.csv", report.name));
    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record(["metric", "value"])?;
    for (k, v) in &report.summary {
        w.write_record([k.clone(), v.to_string()])?;
    }
    w.flush()?;

    let svg = dir.join(format!("{}.svg", report.name));
    std::fs::write(&svg, render_svg(report))?;
    Ok(vec![data, summary, svg])
}

/// Reads a table written by [`emit_report`]: header and numeric rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|s| s.parse::<f64>().unwrap_or(f64::NAN))
                .collect(),
        );
    }
    Ok((header, rows))
}

const W: f64 = 800.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

struct Plot {
    out: String,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Plot {
    fn new(
        title: &str,
        x_label: &str,
        y_label: &str,
        x_range: (f64, f64),
        y_range: (f64, f64),
    ) -> Self {
        let mut out = String::new();
        let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(
            out,
            r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0, MARGIN / 1.5);
        let _ = writeln!(
            out,
            r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#
        );
        let _ = writeln!(
            out,
            r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            W / 2.0,
            H - 15.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="15" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 15 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(y_label)
        );
        let mut p = Self {
            out,
            x_range,
            y_range,
        };
        for i in 0..=4 {
            let fx = x_range.0 + (x_range.1 - x_range.0) * i as f64 / 4.0;
            let fy = y_range.0 + (y_range.1 - y_range.0) * i as f64 / 4.0;
            let (sx, _) = p.map(fx, y_range.0);
            let (_, sy) = p.map(x_range.0, fy);
            let _ = writeln!(
                p.out,
                r#"<text x="{sx:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="10">{fx:.3}</text>"#,
                y0 + 14.0
            );
            let _ = writeln!(
                p.out,
                r#"<text x="{:.1}" y="{sy:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{fy:.3}</text>"#,
                x0 - 4.0
            );
        }
        p
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let span = |r: (f64, f64)| if r.1 > r.0 { r.1 - r.0 } else { 1.0 };
        let sx = MARGIN + (x - self.x_range.0) / span(self.x_range) * (W - 1.5 * MARGIN);
        let sy =
            H - MARGIN - (y - self.y_range.0) / span(self.y_range) * (H - MARGIN - MARGIN / 1.5);
        (sx, sy)
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let (sx, sy) = self.map(x, y);
                format!("{sx:.2},{sy:.2}")
            })
            .collect();
        let _ = writeln!(
            self.out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
    }

    fn legend(&mut self, labels: &[String]) {
        for (i, l) in labels.iter().enumerate() {
            let y = MARGIN / 1.5 + 14.0 * i as f64 + 6.0;
            let x = W - MARGIN * 3.5;
            let _ = writeln!(
                self.out,
                r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#,
                y - 9.0,
                COLORS[i % COLORS.len()]
            );
            let _ = writeln!(
                self.out,
                r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="11">{}</text>"#,
                x + 14.0,
                escape(l)
            );
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.retain(|x| !x.is_nan());
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn render_svg(report: &ExperimentReport) -> String {
    match &report.chart {
        Chart::Histogram { series, bins } => {
            let logs: Vec<Vec<f64>> = series
                .iter()
                .map(|s| {
                    report
                        .column(s)
                        .unwrap_or_default()
                        .into_iter()
                        .filter(|v| v.is_finite() && *v > 0.0)
                        .map(f64::log10)
                        .collect()
                })
                .collect();
            let all = logs.iter().flatten();
            let lo = all.clone().copied().fold(f64::INFINITY, f64::min).floor();
            let hi = all.copied().fold(f64::NEG_INFINITY, f64::max).ceil();
            let (lo, hi) = if lo.is_finite() && hi > lo {
                (lo, hi)
            } else {
                (-16.0, 0.0)
            };
            let bins = (*bins).max(1);
            let width = (hi - lo) / bins as f64;
            let counts: Vec<Vec<f64>> = logs
                .iter()
                .map(|v| {
                    let mut c = vec![0.0; bins];
                    for x in v {
                        let b = (((x - lo) / width) as usize).min(bins - 1);
                        c[b] += 1.0;
                    }
                    c.iter().map(|k| k / v.len().max(1) as f64).collect()
                })
                .collect();
            let ymax = counts
                .iter()
                .flatten()
                .copied()
                .fold(0.0, f64::max)
                .max(1e-9);
            let mut p = Plot::new(
                &report.name,
                "log10(value)",
                "fraction of trials",
                (lo, hi),
                (0.0, ymax),
            );
            for (i, c) in counts.iter().enumerate() {
                let mut pts = Vec::with_capacity(2 * bins + 2);
                pts.push((lo, 0.0));
                for (b, &v) in c.iter().enumerate() {
                    pts.push((lo + width * b as f64, v));
                    pts.push((lo + width * (b + 1) as f64, v));
                }
                pts.push((hi, 0.0));
                p.polyline(&pts, COLORS[i % COLORS.len()]);
            }
            p.legend(series);
            p.finish()
        }
        Chart::MedianCurves { x, series } => {
            let xs = report.column(x).unwrap_or_default();
            let mut levels: Vec<f64> = xs.clone();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            let curves: Vec<Vec<(f64, f64)>> = series
                .iter()
                .map(|s| {
                    let col = report.column(s).unwrap_or_default();
                    levels
                        .iter()
                        .map(|&l| {
                            let m = median(
                                xs.iter()
                                    .zip(&col)
                                    .filter(|(a, _)| **a == l)
                                    .map(|(_, v)| *v)
                                    .collect(),
                            );
                            (l, if m > 0.0 { m.log10() } else { -17.0 })
                        })
                        .collect()
                })
                .collect();
            let ys = curves
                .iter()
                .flatten()
                .map(|p| p.1)
                .filter(|v| v.is_finite());
            let ylo = ys.clone().fold(f64::INFINITY, f64::min).floor();
            let yhi = ys.fold(f64::NEG_INFINITY, f64::max).ceil();
            let (ylo, yhi) = if ylo.is_finite() && yhi > ylo {
                (ylo, yhi)
            } else {
                (-16.0, 0.0)
            };
            let xr = (
                levels.first().copied().unwrap_or(0.0),
                levels.last().copied().unwrap_or(1.0),
            );
            let mut p = Plot::new(&report.name, x, "log10(median error)", xr, (ylo, yhi));
            for (i, c) in curves.iter().enumerate() {
                p.polyline(c, COLORS[i % COLORS.len()]);
            }
            p.legend(series);
            p.finish()
        }
    }
}
