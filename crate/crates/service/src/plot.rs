//! Minimal SVG line charts for learning curves.

use std::fmt::Write;

use hast_core::engine::RunAggregate;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Mean pseudo-labels per point, drawn as bars on a secondary axis.
    pub bars: Vec<f64>,
}

impl Series {
    pub fn from_aggregate(label: impl Into<String>, agg: &RunAggregate) -> Self {
        Self {
            label: label.into(),
            points: agg
                .labeled_counts
                .iter()
                .zip(&agg.mean_scores)
                .map(|(&x, &y)| (x as f64, y))
                .collect(),
            bars: agg.mean_pseudo_counts.clone(),
        }
    }
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 64.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 56.0;
const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders score against labeled count. The y axis spans the data range
/// rounded out to tenths.
pub fn render_svg(title: &str, y_label: &str, series: &[Series]) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    y0 = ((y0 * 10.0).floor() / 10.0).max(0.0);
    y1 = ((y1 * 10.0).ceil() / 10.0).min(1.0);
    if y1 <= y0 {
        y1 = y0 + 0.1;
    }
    let bar_max = series
        .iter()
        .flat_map(|s| s.bars.iter().copied())
        .fold(0.0f64, f64::max);

    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    // Pseudo-label bars, behind everything else.
    if bar_max > 0.0 {
        let n = series.len().max(1) as f64;
        for (si, s) in series.iter().enumerate() {
            let color = COLORS[si % COLORS.len()];
            let step = if s.points.len() > 1 { pw / (s.points.len() - 1) as f64 } else { pw };
            let bw = (step * 0.6 / n).max(1.0);
            for (&(x, _), &b) in s.points.iter().zip(&s.bars) {
                let h = b / bar_max * ph * 0.35;
                let bx = sx(x) - step * 0.3 + si as f64 * bw;
                let _ = writeln!(
                    out,
                    r#"<rect x="{bx:.2}" y="{:.2}" width="{bw:.2}" height="{h:.2}" fill="{color}" opacity="0.18"/>"#,
                    TOP + ph - h
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(90 {:.2} {:.2})">pseudo-labels (max {bar_max:.0})</text>"#,
            WIDTH - 20.0,
            TOP + ph / 2.0,
            WIDTH - 20.0,
            TOP + ph / 2.0
        );
    }

    // Axes and ticks.
    let _ = writeln!(
        out,
        r#"<path d="M{LEFT} {TOP} V{:.2} H{:.2}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    for i in 0..=5 {
        let y = y0 + (y1 - y0) * i as f64 / 5.0;
        let py = sy(y);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{y:.2}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            py + 4.0
        );
    }
    let ticks: Vec<f64> = series
        .first()
        .map(|s| s.points.iter().map(|p| p.0).collect())
        .unwrap_or_default();
    for x in ticks {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x}</text>"#,
            sx(x),
            TOP + ph + 18.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">labeled instances</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );

    for (si, s) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| format!("{}{:.2} {:.2}", if i == 0 { "M" } else { "L" }, sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = TOP + 14.0 + 18.0 * si as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="14" height="4" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            LEFT + pw - 160.0,
            ly - 4.0,
            LEFT + pw - 140.0,
            ly,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}
