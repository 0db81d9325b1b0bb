//! Standalone SVG line charts of metrics logs.
//!
//! ```toml
//! output = "lambda_and_ratio.svg"
//! title = "Budget tracking"
//! source = ["runs/run-abc-s0/metrics.csv"]
//! series = ["lambda", "j_hat_c"]
//! smooth = 50                      # optional trailing mean
//!
//! [[phase_markers]]
//! iteration = 0
//! tau = 0.3
//!
//! [[phase_markers]]
//! iteration = 1500
//! tau = 0.5
//! ```
//!
//! Each series gets its own panel with one line per source file. Phase
//! markers draw vertical lines on every panel; their τ values are drawn as
//! dashed horizontal segments on ratio panels (`j_hat_c` and any column
//! whose name contains `ratio`).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::CsvTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseMarker {
    pub iteration: u64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSpec {
    pub source: Vec<PathBuf>,
    pub series: Vec<String>,
    pub output: PathBuf,
    #[serde(default)]
    pub phase_markers: Vec<PhaseMarker>,
    #[serde(default)]
    pub title: Option<String>,
    /// Trailing-mean window applied to every line.
    #[serde(default)]
    pub smooth: Option<usize>,
}

impl PlotSpec {
    /// Parses a spec; relative paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut spec: PlotSpec = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        if spec.source.is_empty() {
            return Err(Error::config("plot: `source` lists no CSV files"));
        }
        if spec.series.is_empty() {
            return Err(Error::config("plot: `series` lists no columns"));
        }
        if spec.smooth == Some(0) {
            return Err(Error::config("plot: `smooth` must be positive"));
        }
        for p in spec.source.iter_mut().chain(std::iter::once(&mut spec.output)) {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

const WIDTH: f64 = 860.0;
const PANEL_HEIGHT: f64 = 240.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const GAP: f64 = 50.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Line {
    label: String,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

fn is_ratio(series: &str) -> bool {
    series == "j_hat_c" || series.contains("ratio")
}

fn smooth(ys: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(ys.len());
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &y) in ys.iter().enumerate() {
        if y.is_finite() {
            sum += y;
            count += 1;
        }
        if i >= window && ys[i - window].is_finite() {
            sum -= ys[i - window];
            count -= 1;
        }
        out.push(if count > 0 { sum / count as f64 } else { f64::NAN });
    }
    out
}

fn label_for(path: &Path, index: usize) -> String {
    path.parent()
        .and_then(Path::file_name)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("source {index}"))
}

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / count as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    while t <= hi + step * 1e-9 {
        ticks.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    ticks
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the chart described by `spec` from already loaded tables.
pub fn render_svg(spec: &PlotSpec, tables: &[CsvTable]) -> Result<String> {
    let panels = spec.series.len();
    let height = TOP + panels as f64 * (PANEL_HEIGHT + GAP) + 10.0;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    if let Some(title) = &spec.title {
        writeln!(svg, r#"<text x="{}" y="18" font-size="14" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();
    }

    for (panel, series) in spec.series.iter().enumerate() {
        let mut lines = Vec::new();
        for (i, (table, path)) in tables.iter().zip(&spec.source).enumerate() {
            let ys = table.column(series).ok_or_else(|| {
                Error::config(format!("column `{series}` not found in {}", path.display()))
            })?;
            let xs = table
                .column("iteration")
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| (0..ys.len()).map(|v| v as f64).collect());
            let ys = match spec.smooth {
                Some(w) => smooth(ys, w),
                None => ys.to_vec(),
            };
            lines.push(Line { label: label_for(path, i), xs, ys });
        }

        let finite = |v: &&f64| v.is_finite();
        let mut x_lo = lines.iter().flat_map(|l| l.xs.iter()).filter(finite).cloned().fold(f64::INFINITY, f64::min);
        let mut x_hi = lines.iter().flat_map(|l| l.xs.iter()).filter(finite).cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut y_lo = lines.iter().flat_map(|l| l.ys.iter()).filter(finite).cloned().fold(f64::INFINITY, f64::min);
        let mut y_hi = lines.iter().flat_map(|l| l.ys.iter()).filter(finite).cloned().fold(f64::NEG_INFINITY, f64::max);
        if is_ratio(series) {
            for m in &spec.phase_markers {
                y_lo = y_lo.min(m.tau);
                y_hi = y_hi.max(m.tau);
            }
        }
        if !y_lo.is_finite() {
            return Err(Error::domain(format!("column `{series}` has no numeric values")));
        }
        if !x_lo.is_finite() {
            (x_lo, x_hi) = (0.0, 1.0);
        }
        if x_hi <= x_lo {
            x_hi = x_lo + 1.0;
        }
        if y_hi <= y_lo {
            y_lo -= 0.5;
            y_hi += 0.5;
        }
        let pad = (y_hi - y_lo) * 0.05;
        let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);

        let top = TOP + panel as f64 * (PANEL_HEIGHT + GAP);
        let plot_w = WIDTH - LEFT - RIGHT;
        let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let sy = |y: f64| top + PANEL_HEIGHT - (y - y_lo) / (y_hi - y_lo) * PANEL_HEIGHT;

        writeln!(svg, r#"<g class="panel" data-series="{}">"#, escape(series)).unwrap();
        writeln!(
            svg,
            r##"<rect x="{LEFT}" y="{top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#333"/>"##
        )
        .unwrap();
        for t in nice_ticks(y_lo, y_hi, 5) {
            let y = sy(t);
            writeln!(svg, r##"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##, LEFT - 4.0, LEFT - 6.0, y + 4.0, fmt_tick(t)).unwrap();
        }
        for t in nice_ticks(x_lo, x_hi, 8) {
            let x = sx(t);
            let base = top + PANEL_HEIGHT;
            writeln!(svg, r##"<line x1="{x:.2}" y1="{base}" x2="{x:.2}" y2="{}" stroke="#333"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"##, base + 4.0, base + 16.0, fmt_tick(t)).unwrap();
        }
        writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#, LEFT + plot_w / 2.0, top + PANEL_HEIGHT + 32.0).unwrap();
        writeln!(svg, r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#, top + PANEL_HEIGHT / 2.0, escape(series)).unwrap();

        // phase boundaries and targets
        for (i, m) in spec.phase_markers.iter().enumerate() {
            let x = sx(m.iteration as f64).clamp(LEFT, LEFT + plot_w);
            writeln!(
                svg,
                r##"<line class="phase" x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{}" stroke="#888" stroke-width="1"/><text x="{:.2}" y="{}" fill="#555">τ={}</text>"##,
                top + PANEL_HEIGHT,
                x + 3.0,
                top + 12.0,
                m.tau
            )
            .unwrap();
            if is_ratio(series) {
                let end = spec
                    .phase_markers
                    .get(i + 1)
                    .map_or(x_hi, |n| n.iteration as f64);
                let y = sy(m.tau);
                writeln!(
                    svg,
                    r##"<line class="target" x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#000" stroke-dasharray="6 4"/>"##,
                    sx(end).clamp(LEFT, LEFT + plot_w)
                )
                .unwrap();
            }
        }

        for (i, line) in lines.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let mut d = String::new();
            let mut pen_down = false;
            for (&x, &y) in line.xs.iter().zip(&line.ys) {
                if !(x.is_finite() && y.is_finite()) {
                    pen_down = false;
                    continue;
                }
                write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, sx(x), sy(y)).unwrap();
                pen_down = true;
            }
            writeln!(svg, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#, d.trim_end()).unwrap();
            let ly = top + 14.0 + i as f64 * 16.0;
            let lx = LEFT + plot_w + 12.0;
            writeln!(
                svg,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                lx + 18.0,
                lx + 22.0,
                ly + 4.0,
                escape(&line.label)
            )
            .unwrap();
        }
        writeln!(svg, "</g>").unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Reads the sources, renders, and writes `spec.output`.
pub fn plot(spec: &PlotSpec) -> Result<PathBuf> {
    let tables = spec
        .source
        .iter()
        .map(|p| CsvTable::read(p))
        .collect::<Result<Vec<_>>>()?;
    let svg = render_svg(spec, &tables)?;
    if let Some(parent) = spec.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&spec.output, svg).map_err(|e| Error::io(&spec.output, e))?;
    Ok(spec.output.clone())
}
