//! Report files: a wide CSV of every run, metric JSON lines, per-row
//! summaries and static SVG plots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use omniview_train::{read_metrics, METRICS_FILE};
use serde::Serialize;

use crate::ablation::{read_report, summarize, REPORT_FILE};
use crate::eval::EvalReport;
use crate::{HarnessError, Result};

pub const REPORTS_CSV: &str = "reports.csv";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const LOSS_PLOT: &str = "loss_curves.svg";

const FIXED_COLUMNS: [&str; 3] = ["run_id", "seed", "fingerprint"];

/// Training-loss trace of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    pub run_id: String,
    pub total_iters: u64,
    pub points: Vec<(u64, f64)>,
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Format(e.to_string())
}

/// Row label of a run id `label/seedN`.
pub fn row_label(run_id: &str) -> &str {
    run_id.rsplit_once('/').map_or(run_id, |(l, _)| l)
}

pub fn reports_csv(reports: &[EvalReport]) -> Result<String> {
    let metrics: BTreeSet<&str> = reports.iter().flat_map(|r| r.metrics.keys().map(String::as_str)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FIXED_COLUMNS.iter().copied().chain(metrics.iter().copied())).map_err(csv_err)?;
    for r in reports {
        let mut rec = vec![r.run_id.clone(), r.seed.to_string(), r.fingerprint.clone()];
        rec.extend(metrics.iter().map(|m| r.metrics.get(*m).map(|v| format!("{v:?}")).unwrap_or_default()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| HarnessError::Format(e.to_string()))?).map_err(|e| HarnessError::Format(e.to_string()))
}

pub fn parse_reports_csv(text: &str) -> Result<Vec<EvalReport>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().take(3).ne(FIXED_COLUMNS) {
        return Err(HarnessError::Format("reports CSV must start with run_id,seed,fingerprint".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let seed = rec[1].parse().map_err(|_| HarnessError::Format(format!("bad seed {:?}", &rec[1])))?;
        let mut metrics = BTreeMap::new();
        for (name, v) in headers.iter().zip(rec.iter()).skip(3) {
            if !v.is_empty() {
                metrics.insert(name.to_string(), v.parse().map_err(|_| HarnessError::Format(format!("bad value {v:?} for {name}")))?);
            }
        }
        out.push(EvalReport::new(&rec[0], seed, &rec[2], metrics)?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct MetricLine<'a> {
    run_id: &'a str,
    seed: u64,
    metric: &'a str,
    value: f64,
}

pub fn metrics_jsonl(reports: &[EvalReport]) -> Result<String> {
    let mut s = String::new();
    for r in reports {
        for (metric, &value) in &r.metrics {
            let line = MetricLine { run_id: &r.run_id, seed: r.seed, metric, value };
            s.push_str(&serde_json::to_string(&line).map_err(|e| HarnessError::Format(e.to_string()))?);
            s.push('\n');
        }
    }
    Ok(s)
}

/// Mean and standard deviation per (row label, metric), rows in first-seen
/// order.
pub fn summary_csv(reports: &[EvalReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "metric", "mean", "std", "n"]).map_err(csv_err)?;
    for (label, metrics) in grouped(reports) {
        for (metric, values) in metrics {
            let s = summarize(&values);
            w.write_record([label.clone(), metric, format!("{:?}", s.mean), format!("{:?}", s.std), s.n.to_string()]).map_err(csv_err)?;
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| HarnessError::Format(e.to_string()))?).map_err(|e| HarnessError::Format(e.to_string()))
}

fn grouped(reports: &[EvalReport]) -> Vec<(String, BTreeMap<String, Vec<f64>>)> {
    let mut rows: Vec<(String, BTreeMap<String, Vec<f64>>)> = Vec::new();
    for r in reports {
        let label = row_label(&r.run_id);
        let i = match rows.iter().position(|(l, _)| l == label) {
            Some(i) => i,
            None => {
                rows.push((label.to_string(), BTreeMap::new()));
                rows.len() - 1
            }
        };
        for (k, v) in &r.metrics {
            rows[i].1.entry(k.clone()).or_default().push(*v);
        }
    }
    rows
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Loss curves on a shared x-axis spanning `[0, max total_iters]`.
pub fn loss_plot_svg(curves: &[LossCurve]) -> String {
    let x_max = curves.iter().map(|c| c.total_iters).max().unwrap_or(1).max(1);
    let ys: Vec<f64> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.1)).filter(|v| v.is_finite()).collect();
    let (y_min, y_max) = match ys.iter().copied().fold(None, |acc: Option<(f64, f64)>, v| Some(acc.map_or((v, v), |(a, b)| (a.min(v), b.max(v))))) {
        Some((a, b)) if b > a => (a, b),
        Some((a, _)) => (a - 0.5, a + 0.5),
        None => (0.0, 1.0),
    };
    let sx = |x: u64| M + (W - 2.0 * M) * x as f64 / x_max as f64;
    let sy = |y: f64| H - M - (H - 2.0 * M) * (y - y_min) / (y_max - y_min);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(s, r#"<g class="x-axis" data-min="0" data-max="{x_max}">"#);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - M, W - M, H - M);
    let _ = writeln!(s, r#"<text x="{M}" y="{}" font-size="11">0</text>"#, H - M + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{x_max}</text>"#, W - M, H - M + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">iteration</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="y-axis" data-min="{y_min:.6}" data-max="{y_max:.6}">"#);
    let _ = writeln!(s, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{y_max:.3}</text>"#, M - 4.0, M + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{y_min:.3}</text>"#, M - 4.0, H - M);
    let _ = writeln!(s, "</g>");
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c.points.iter().filter(|p| p.1.is_finite()).map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline class="curve" data-run="{}" fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#, escape(&c.run_id), pts.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text>"#, W - M + 4.0 - 120.0, M + 12.0 * i as f64, escape(&c.run_id));
    }
    s.push_str("</svg>\n");
    s
}

/// Bars of one metric's per-row mean with ±1 std whiskers.
pub fn metric_bars_svg(metric: &str, rows: &[(String, f64, f64)]) -> String {
    let top = rows.iter().map(|r| r.1 + r.2).fold(0.0f64, f64::max);
    let top = if top > 0.0 { top } else { 1.0 };
    let bottom = rows.iter().map(|r| r.1 - r.2).fold(0.0f64, f64::min);
    let span = top - bottom;
    let sy = |v: f64| H - M - (H - 2.0 * M) * (v - bottom) / span;
    let slot = (W - 2.0 * M) / rows.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, W / 2.0, escape(metric));
    let _ = writeln!(s, r#"<line x1="{M}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="black"/>"#, sy(0.0), W - M, sy(0.0));
    for (i, (label, mean, std)) in rows.iter().enumerate() {
        let x = M + slot * i as f64 + slot * 0.15;
        let bw = slot * 0.7;
        let (y0, y1) = (sy(0.0), sy(*mean));
        let _ = writeln!(
            s,
            r#"<rect class="bar" data-row="{}" data-mean="{mean:?}" x="{x:.2}" y="{:.2}" width="{bw:.2}" height="{:.2}" fill="{}"/>"#,
            escape(label),
            y0.min(y1),
            (y0 - y1).abs(),
            PALETTE[i % PALETTE.len()]
        );
        let cx = x + bw / 2.0;
        let _ = writeln!(s, r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#, sy(mean - std), sy(mean + std));
        let _ = writeln!(s, r#"<text x="{cx:.2}" y="{}" font-size="10" text-anchor="middle">{}</text>"#, H - M + 14.0, escape(label));
        let _ = writeln!(s, r#"<text x="{cx:.2}" y="{:.2}" font-size="10" text-anchor="middle">{mean:.3}</text>"#, y1.min(y0) - 4.0);
    }
    s.push_str("</svg>\n");
    s
}

fn safe_name(metric: &str) -> String {
    metric.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect()
}

/// Writes the report set into `out`. File names depend only on the metric
/// names, and identical inputs give identical bytes.
pub fn emit_report(reports: &[EvalReport], curves: &[LossCurve], out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, text)?;
        written.push(p);
        Ok(())
    };
    put(REPORTS_CSV.into(), reports_csv(reports)?)?;
    put(METRICS_JSONL.into(), metrics_jsonl(reports)?)?;
    put(SUMMARY_CSV.into(), summary_csv(reports)?)?;
    put(LOSS_PLOT.into(), loss_plot_svg(curves))?;
    let rows = grouped(reports);
    let metrics: BTreeSet<&String> = rows.iter().flat_map(|(_, m)| m.keys()).collect();
    for metric in metrics {
        let bars: Vec<(String, f64, f64)> = rows
            .iter()
            .filter_map(|(label, m)| m.get(metric).map(|v| summarize(v)).map(|s| (label.clone(), s.mean, s.std)))
            .collect();
        put(format!("bars_{}.svg", safe_name(metric)), metric_bars_svg(metric, &bars))?;
    }
    Ok(written)
}

/// Collects `report.json` and training logs from an ablation output tree
/// (`<dir>/<row>/seed<k>/`), ordered by row then seed.
pub fn collect_runs(dir: &Path) -> Result<(Vec<EvalReport>, Vec<LossCurve>)> {
    let mut cells = Vec::new();
    for row in sorted_dirs(dir)? {
        for cell in sorted_dirs(&row)? {
            if cell.join(REPORT_FILE).exists() {
                cells.push(cell);
            }
        }
    }
    let mut reports = Vec::new();
    let mut curves = Vec::new();
    for cell in cells {
        let report = read_report(&cell.join(REPORT_FILE))?;
        let metrics = cell.join(METRICS_FILE);
        if metrics.exists() {
            let rows = read_metrics(&metrics)?;
            let total = rows.last().map_or(0, |r| r.iteration + 1);
            let points = rows.iter().filter_map(|r| r.loss_total.map(|l| (r.iteration, l))).collect();
            curves.push(LossCurve { run_id: report.run_id.clone(), total_iters: total, points });
        }
        reports.push(report);
    }
    Ok((reports, curves))
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    v.sort();
    Ok(v)
}
