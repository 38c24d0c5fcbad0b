//! Static SVG line charts of a metrics stream.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::ExperimentKind;
use super::metrics::{read_jsonl, MetricsRecord};
use crate::error::{Error, Result};
use crate::subspace::least_squares_slope;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Chartable metrics.
pub const CHARTS: [&str; 4] = ["loss", "accuracy", "sin_theta", "variance_ratio"];

fn value(r: &MetricsRecord, metric: &str) -> Option<f64> {
    match metric {
        "variance_ratio" => match (r.dom_var, r.bulk_var) {
            (Some(d), Some(b)) if b > 0.0 => Some(d / b),
            _ => None,
        },
        other => r.field(other),
    }
}

/// Charts with at least one point in `records`.
pub fn available_charts(records: &[MetricsRecord]) -> Vec<&'static str> {
    CHARTS
        .into_iter()
        .filter(|m| records.iter().any(|r| value(r, m).is_some()))
        .collect()
}

/// Renders one chart per metric in `charts` from the metrics file at `metrics`
/// into `dir` as `<experiment>_<metric>.svg`. A `fit` window adds the
/// least-squares slope of `ln sin_theta` to the sinΘ chart.
pub fn emit_plots(
    metrics: &Path,
    experiment: ExperimentKind,
    charts: &[&str],
    fit: Option<(u64, u64)>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let records = read_jsonl(metrics)?;
    if records.is_empty() {
        return Err(Error::Validation(
            "empty chart: the metrics file has no records".into(),
        ));
    }
    if let Some(bad) = charts.iter().find(|c| !CHARTS.contains(c)) {
        return Err(Error::Config(format!(
            "unknown metric {bad:?} in plot spec"
        )));
    }
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for &metric in charts {
        let svg = render(&records, metric, fit)?;
        let path = dir.join(format!("{experiment}_{metric}.svg"));
        std::fs::write(&path, svg)?;
        out.push(path);
    }
    Ok(out)
}

/// Slope of `ln sin_theta` against step over `[from, to]` for one run.
pub fn fitted_slope(records: &[MetricsRecord], run: &str, from: u64, to: u64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.run() == run && r.step >= from && r.step <= to)
        .filter_map(|r| {
            r.sin_theta
                .filter(|&s| s > 0.0)
                .map(|s| (r.step as f64, s.ln()))
        })
        .collect();
    least_squares_slope(&pts)
}

/// The SVG text of one chart.
pub fn render(records: &[MetricsRecord], metric: &str, fit: Option<(u64, u64)>) -> Result<String> {
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        if let Some(y) = value(r, metric) {
            series.entry(r.run()).or_default().push((r.step as f64, y));
        }
    }
    if series.is_empty() {
        return Err(Error::Validation(format!(
            "empty chart: no {metric} values"
        )));
    }
    let log_y = metric == "sin_theta"
        || (metric != "accuracy" && {
            let ys = series.values().flatten().map(|p| p.1);
            let (lo, hi) = ys.fold((f64::INFINITY, 0.0f64), |(a, b), y| (a.min(y), b.max(y)));
            lo > 0.0 && hi / lo > 1e3
        });
    let ty = |y: f64| if log_y { y.max(1e-300).log10() } else { y };
    let pts = series.values().flatten();
    let (x0, x1, y0, y1) = pts.fold(
        (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(ty(y)), d.max(ty(y))),
    );
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let px = |x: f64| MARGIN + (x - x0) / span(x0, x1) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (ty(y) - y0) / span(y0, y1) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    let ylabel = if log_y {
        format!("log10 {metric}")
    } else {
        metric.to_string()
    };
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="14" text-anchor="middle">{ylabel} vs step</text>"#,
        W / 2.0,
        MARGIN / 2.0
    );
    for (i, (x, anchor)) in [(x0, "start"), (x1, "end")].into_iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="{anchor}">{}</text>"#,
            px(x),
            H - MARGIN + 16.0,
            if i == 0 { x0 } else { x1 }
        );
    }
    for y in [y0, y1] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{y:.3e}</text>"#,
            MARGIN - 4.0,
            H - MARGIN - (y - y0) / span(y0, y1) * (H - 2.0 * MARGIN)
        );
    }
    for (i, (run, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let label = if run.is_empty() { metric } else { run };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            W - MARGIN + 4.0,
            MARGIN + 14.0 * i as f64,
            escape(label)
        );
    }
    if let (Some((from, to)), "sin_theta") = (fit, metric) {
        let run = *series.keys().next().expect("nonempty");
        if let Some(slope) = fitted_slope(records, run, from, to) {
            let _ = writeln!(
                s,
                r#"<text id="slope" data-slope="{slope:?}" x="{}" y="{}" font-size="12">fitted slope of ln sinΘ over [{from}, {to}]: {slope:.6}</text>"#,
                MARGIN + 8.0,
                MARGIN + 18.0
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
