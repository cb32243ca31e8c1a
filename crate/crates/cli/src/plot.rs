//! Minimal SVG line charts: vertically stacked panels sharing a time axis.

use std::fmt::Write as _;

const WIDTH: f64 = 760.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN_LEFT: f64 = 78.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 44.0;
const GAP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 52.0;
/// Per-series point budget; longer series are reduced to per-bucket
/// extremes so short spikes survive.
const MAX_POINTS: usize = 2000;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            x,
            y,
            dashed: false,
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    /// Axis label including the unit, e.g. `angle [rad]`.
    pub y_label: String,
    pub series: Vec<Series>,
}

impl Panel {
    pub fn new(title: impl Into<String>, y_label: impl Into<String>, series: Vec<Series>) -> Self {
        Self {
            title: title.into(),
            y_label: y_label.into(),
            series,
        }
    }
}

/// Round tick positions covering `[lo, hi]`, about `target` of them.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Keeps the first and last point and, per bucket, the minimum and maximum
/// in time order.
fn decimate(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len().min(y.len());
    if n <= MAX_POINTS {
        return (0..n).map(|i| (x[i], y[i])).collect();
    }
    let buckets = MAX_POINTS / 2;
    let mut out = Vec::with_capacity(MAX_POINTS + 2);
    for b in 0..buckets {
        let (s, e) = (
            b * n / buckets,
            ((b + 1) * n / buckets).max(b * n / buckets + 1),
        );
        let finite = (s..e).filter(|&i| y[i].is_finite());
        let lo = finite.clone().min_by(|&i, &j| y[i].total_cmp(&y[j]));
        let hi = finite.max_by(|&i, &j| y[i].total_cmp(&y[j]));
        match (lo, hi) {
            (Some(a), Some(b)) if a == b => out.push((x[a], y[a])),
            (Some(a), Some(b)) => {
                let (p, q) = if a < b { (a, b) } else { (b, a) };
                out.push((x[p], y[p]));
                out.push((x[q], y[q]));
            }
            _ => out.push((x[s], f64::NAN)),
        }
    }
    out
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values
        .filter(|v| v.is_finite())
        .fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

/// Renders the panels stacked top to bottom over a shared x axis.
pub fn render(title: &str, x_label: &str, panels: &[Panel]) -> String {
    let height = MARGIN_TOP + panels.len() as f64 * (PANEL_HEIGHT + GAP) - GAP + MARGIN_BOTTOM;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let (x_lo, x_hi) = range(
        panels
            .iter()
            .flat_map(|p| p.series.iter().flat_map(|s| s.x.iter().copied())),
    )
    .unwrap_or((0.0, 1.0));
    let (x_lo, x_hi) = if x_hi > x_lo {
        (x_lo, x_hi)
    } else {
        padded(x_lo, x_hi)
    };
    let sx = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    for (k, panel) in panels.iter().enumerate() {
        let top = MARGIN_TOP + k as f64 * (PANEL_HEIGHT + GAP);
        let bottom = top + PANEL_HEIGHT;
        let (y_lo, y_hi) = range(panel.series.iter().flat_map(|s| s.y.iter().copied()))
            .map(|(a, b)| padded(a, b))
            .unwrap_or((0.0, 1.0));
        let sy = |y: f64| bottom - (y - y_lo) / (y_hi - y_lo) * PANEL_HEIGHT;

        let _ = writeln!(
            svg,
            r##"<rect x="{MARGIN_LEFT}" y="{top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{MARGIN_LEFT}" y="{}" font-size="13">{}</text>"#,
            top - 6.0,
            escape(&panel.title)
        );
        for t in nice_ticks(y_lo, y_hi, 5) {
            let y = sy(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                MARGIN_LEFT + plot_w,
                MARGIN_LEFT - 6.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        for t in nice_ticks(x_lo, x_hi, 8) {
            let x = sx(t);
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{bottom}" stroke="#eee"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                bottom + 16.0,
                fmt_tick(t)
            );
        }
        if y_lo < 0.0 && y_hi > 0.0 {
            let y = sy(0.0);
            let _ = writeln!(
                svg,
                r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#999"/>"##,
                MARGIN_LEFT + plot_w
            );
        }
        let mid = (top + bottom) / 2.0;
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{mid:.2}" text-anchor="middle" transform="rotate(-90 18 {mid:.2})">{}</text>"#,
            escape(&panel.y_label)
        );

        for (i, s) in panel.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let dash = if s.dashed {
                r#" stroke-dasharray="6 4""#
            } else {
                ""
            };
            let mut d = String::new();
            let mut pen_down = false;
            for (x, y) in decimate(&s.x, &s.y) {
                if !(x.is_finite() && y.is_finite()) {
                    pen_down = false;
                    continue;
                }
                let _ = write!(
                    d,
                    "{}{:.2},{:.2}",
                    if pen_down { " L" } else { " M" },
                    sx(x),
                    sy(y)
                );
                pen_down = true;
            }
            if !d.is_empty() {
                let _ = writeln!(
                    svg,
                    r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.4"{dash}/>"#,
                    d.trim_start()
                );
            }
            let ly = top + 14.0 + 18.0 * i as f64;
            let lx = MARGIN_LEFT + plot_w + 12.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{ly:.2}">{}</text>"#,
                ly - 4.0,
                lx + 22.0,
                ly - 4.0,
                lx + 28.0,
                escape(&s.label)
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        height - 12.0,
        escape(x_label)
    );
    svg.push_str("</svg>\n");
    svg
}
