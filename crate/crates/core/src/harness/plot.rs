//! Static SVG line charts of population loss against rounds, samples or
//! passes over the training set.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trace::TraceRow;

/// Horizontal axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotAxis {
    Rounds,
    Samples,
    /// `samples_per_machine / n`.
    Passes,
}

impl PlotAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rounds" => Ok(Self::Rounds),
            "samples" => Ok(Self::Samples),
            "passes" => Ok(Self::Passes),
            _ => Err(Error::Config(format!("unknown plot axis {s:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rounds => "rounds",
            Self::Samples => "samples",
            Self::Passes => "passes",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Rounds => "communication rounds",
            Self::Samples => "samples per machine",
            Self::Passes => "passes over the training set (samples / n)",
        }
    }

    pub fn value(self, row: &TraceRow, n_train: usize) -> f64 {
        match self {
            Self::Rounds => row.comm_rounds as f64,
            Self::Samples => row.samples_per_machine as f64,
            Self::Passes => row.samples_per_machine as f64 / n_train as f64,
        }
    }
}

/// One curve.
#[derive(Debug, Clone)]
pub struct Series<'a> {
    pub name: String,
    pub rows: &'a [TraceRow],
}

/// Local and Centralized population losses drawn as horizontal lines.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct References {
    pub local: Option<f64>,
    pub centralized: Option<f64>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Curve points of each series: `(x, population_loss)`.
pub fn series_points(series: &[Series<'_>], axis: PlotAxis, n_train: usize) -> Result<Vec<Vec<(f64, f64)>>> {
    series
        .iter()
        .map(|s| {
            s.rows
                .iter()
                .map(|r| {
                    r.population_loss
                        .map(|p| (axis.value(r, n_train), p))
                        .ok_or_else(|| Error::Config(format!("trace {:?} has no population_loss column", s.name)))
                })
                .collect()
        })
        .collect()
}

/// Renders the chart. Byte-identical for identical input.
pub fn render_svg(series: &[Series<'_>], axis: PlotAxis, refs: References, n_train: usize) -> Result<String> {
    if series.is_empty() {
        return Err(Error::Empty("nothing to plot".into()));
    }
    if n_train == 0 {
        return Err(Error::Domain("training size must be positive".into()));
    }
    let points = series_points(series, axis, n_train)?;
    let all = points.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    for r in [refs.local, refs.centralized].into_iter().flatten() {
        y0 = y0.min(r);
        y1 = y1.max(r);
    }
    if !x0.is_finite() {
        return Err(Error::Empty("series have no rows".into()));
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<metadata>x-axis: {}; y-axis: population loss</metadata>"#, axis.label());
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect class="frame" x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(fx),
            H - BOTTOM + 15.0,
            tick(fx)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            sy(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        axis.label()
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">population loss</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    let mut legend_y = TOP + 10.0;
    for (name, value, dash) in [("Local", refs.local, "6,3"), ("Centralized", refs.centralized, "2,2")] {
        if let Some(v) = value {
            let _ = writeln!(
                s,
                r##"<line class="reference" x1="{LEFT}" x2="{:.1}" y1="{:.2}" y2="{:.2}" stroke="#555" stroke-dasharray="{dash}"/>"##,
                LEFT + pw,
                sy(v),
                sy(v)
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{legend_y:.1}">{name}</text>"#, W - RIGHT + 10.0);
            legend_y += 15.0;
        }
    }
    for (k, (serie, pts)) in series.iter().zip(&points).enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{legend_y:.1}" fill="{color}">{}</text>"#,
            W - RIGHT + 10.0,
            escape(&serie.name)
        );
        legend_y += 15.0;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `population_loss_<axis>.svg` into `dir` for each axis.
pub fn emit_plots(
    series: &[Series<'_>],
    axes: &[PlotAxis],
    refs: References,
    n_train: usize,
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    axes.iter()
        .map(|&axis| {
            let path = dir.join(format!("population_loss_{}.svg", axis.as_str()));
            std::fs::write(&path, render_svg(series, axis, refs, n_train)?)?;
            Ok(path)
        })
        .collect()
}
