//! Results table and accuracy-vs-ratio charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::experiment::{write_results, ExperimentError, ResultRow};
use crate::model::ClassifierKind;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;

const SERIES_CODECS: [&str; 3] = ["hdc", "svd", "small"];
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Files produced by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub charts: Vec<PathBuf>,
}

/// Writes `results.csv` and one SVG per `(dataset, N)` found among the sweep rows.
pub fn emit_report(rows: &[ResultRow], out_dir: &Path) -> Result<ReportFiles, ExperimentError> {
    if rows.is_empty() {
        return Err(ExperimentError::Spec("no results to report".into()));
    }
    fs::create_dir_all(out_dir)?;
    let csv = out_dir.join("results.csv");
    write_results(&csv, rows)?;
    let mut charts = Vec::new();
    for ((dataset, agents), group) in chart_groups(rows) {
        let path = out_dir.join(format!("{}_N{}.svg", file_stem(&dataset), agents));
        fs::write(&path, render_chart(&dataset, agents, &group))?;
        charts.push(path);
    }
    Ok(ReportFiles { csv, charts })
}

/// Sweep rows grouped by `(dataset, N)`. Quantization rows are left to the CSV.
pub fn chart_groups(rows: &[ResultRow]) -> BTreeMap<(String, usize), Vec<&ResultRow>> {
    let mut groups: BTreeMap<(String, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.codec.starts_with("quant")) {
        groups.entry((r.dataset.clone(), r.agents)).or_default().push(r);
    }
    groups
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean accuracy per ratio, sorted by ratio.
fn series(rows: &[&ResultRow], codec: &str, kind: ClassifierKind) -> Vec<(f64, f64)> {
    let mut by_ratio: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.codec == codec && r.classifier_kind == kind) {
        by_ratio.entry(r.ratio_param.to_bits()).or_insert_with(|| (r.ratio_param, Vec::new())).1.push(r.mean_accuracy);
    }
    let mut pts: Vec<(f64, f64)> = by_ratio.into_values().map(|(x, accs)| (x, mean(&accs))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Self-contained SVG: log₂ ratio on x, accuracy on y.
pub fn render_chart(dataset: &str, agents: usize, rows: &[&ResultRow]) -> String {
    let mut lines = Vec::new();
    for codec in SERIES_CODECS {
        for kind in ClassifierKind::ALL {
            let pts = series(rows, codec, kind);
            if !pts.is_empty() {
                let label = match codec {
                    "small" => format!("small-model-{}", kind.name().to_uppercase()),
                    c => format!("{}-{}", c.to_uppercase(), kind.name().to_uppercase()),
                };
                lines.push((label, pts));
            }
        }
    }
    let refs: Vec<(String, f64)> = ClassifierKind::ALL
        .iter()
        .filter_map(|&kind| {
            let accs: Vec<f64> =
                rows.iter().filter(|r| r.codec == "none" && r.classifier_kind == kind).map(|r| r.mean_accuracy).collect();
            (!accs.is_empty()).then(|| (format!("uncompressed {}", kind.name().to_uppercase()), mean(&accs)))
        })
        .collect();
    let bars: Vec<(String, f64)> = ClassifierKind::ALL
        .iter()
        .filter_map(|&kind| {
            let ratios: Vec<f64> =
                rows.iter().filter(|r| r.codec == "deflate" && r.classifier_kind == kind).map(|r| r.ratio_param).collect();
            (!ratios.is_empty()).then(|| (format!("deflate {}", kind.name().to_uppercase()), mean(&ratios)))
        })
        .collect();

    let xs = lines.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).chain(bars.iter().map(|b| b.1));
    let (mut x_lo, mut x_hi) = (1.0f64, 2.0f64);
    for x in xs.filter(|x| *x > 0.0 && x.is_finite()) {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
    }
    let (lx_lo, lx_hi) = (x_lo.log2().floor(), x_hi.log2().ceil().max(x_lo.log2().floor() + 1.0));
    let ys = lines.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)).chain(refs.iter().map(|r| r.1));
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in ys {
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    let y_lo = ((y_lo - 0.02).max(0.0) * 10.0).floor() / 10.0;
    let y_hi = (((y_hi + 0.02).min(1.0) * 10.0).ceil() / 10.0).max(y_lo + 0.1);

    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x.max(f64::MIN_POSITIVE).log2() - lx_lo) / (lx_hi - lx_lo) * pw;
    let py = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}, N = {agents}</text>"#,
        LEFT + pw / 2.0,
        escape(dataset)
    );

    // lossless ratio bars, drawn first so lines sit on top
    for (i, (label, ratio)) in bars.iter().enumerate() {
        let x = px(*ratio);
        let w = 10.0;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{TOP}" width="{w}" height="{ph}" fill="#7f7f7f" fill-opacity="{:.2}"><title>{} ratio {:.3}</title></rect>"##,
            x - w / 2.0 + i as f64 * w,
            0.25,
            escape(label),
            ratio
        );
    }

    // axes and ticks
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT} {TOP} V{} H{}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    let mut e = lx_lo;
    while e <= lx_hi + 1e-9 {
        let x = px(2f64.powf(e));
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            2f64.powf(e)
        );
        e += 1.0;
    }
    let steps = ((y_hi - y_lo) * 10.0).round() as usize;
    for k in 0..=steps {
        let y = y_lo + k as f64 / 10.0;
        let yy = py(y);
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{yy:.2}" x2="{LEFT}" y2="{yy:.2}" stroke="black"/><line x1="{LEFT}" y1="{yy:.2}" x2="{}" y2="{yy:.2}" stroke="#e0e0e0"/><text x="{}" y="{:.2}" text-anchor="end">{y:.1}</text>"##,
            LEFT - 5.0,
            LEFT + pw,
            LEFT - 8.0,
            yy + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">compression ratio</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">accuracy</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    let mut legend: Vec<(String, String, &str)> = Vec::new();
    for (i, (label, acc)) in refs.iter().enumerate() {
        let y = py(*acc);
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black" stroke-dasharray="{}"/>"#,
            LEFT + pw,
            if i == 0 { "6 4" } else { "2 3" }
        );
        legend.push((label.clone(), "black".into(), if i == 0 { "6 4" } else { "2 3" }));
    }
    for (i, (label, pts)) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, d.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"><title>{} ratio {x} accuracy {y:.4}</title></circle>"#,
                px(x),
                py(y),
                escape(label)
            );
        }
        legend.push((label.clone(), color.into(), ""));
    }
    for (label, _) in &bars {
        legend.push((label.clone(), "bar".into(), ""));
    }

    let lx = LEFT + pw + 16.0;
    for (i, (label, color, dash)) in legend.iter().enumerate() {
        let y = TOP + 8.0 + i as f64 * 18.0;
        if color == "bar" {
            let _ = writeln!(
                s,
                r##"<rect x="{lx}" y="{:.2}" width="22" height="10" fill="#7f7f7f" fill-opacity="0.25"/>"##,
                y - 5.0
            );
        } else {
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="{color}" stroke-width="2" stroke-dasharray="{dash}"/>"#,
                lx + 22.0
            );
        }
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}">{}</text>"#, lx + 28.0, y + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}
