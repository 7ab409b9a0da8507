//! Minimal hand-rolled SVG line plots. No dependencies, always well-formed
//! XML: one root element, everything attribute-escaped.

use crate::error::Result;
use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi - lo).is_finite() || hi <= lo {
        return vec![lo];
    }
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Writes a line plot of the given series to `path`.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], path: &Path) -> Result<()> {
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
    }
    if !min_x.is_finite() {
        min_x = 0.0;
        max_x = 1.0;
        min_y = 0.0;
        max_y = 1.0;
    }
    if (max_y - min_y).abs() < 1e-12 {
        max_y = min_y + 1.0;
    }
    if (max_x - min_x).abs() < 1e-12 {
        max_x = min_x + 1.0;
    }
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - min_x) / (max_x - min_x) * plot_w;
    let py = |y: f64| MARGIN_T + (1.0 - (y - min_y) / (max_y - min_y)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        esc(title)
    );

    // Axes and ticks.
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN_B
    );
    for t in nice_ticks(min_x, max_x, 6) {
        let x = px(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="black"/><text x="{x}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{:.0}</text>"#,
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0,
            HEIGHT - MARGIN_B + 18.0,
            t
        );
    }
    for t in nice_ticks(min_y, max_y, 5) {
        let y = py(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{y}" x2="{MARGIN_L}" y2="{y}" stroke="black"/><text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{:.3}</text>"#,
            MARGIN_L - 5.0,
            MARGIN_L - 8.0,
            y + 4.0,
            t
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0,
        esc(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        esc(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = String::new();
        for &(x, y) in &s.points {
            let _ = write!(points, "{:.2},{:.2} ", px(x), py(y));
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            points.trim_end()
        );
        let ly = MARGIN_T + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            WIDTH - 180.0,
            WIDTH - 156.0,
            WIDTH - 150.0,
            ly + 4.0,
            esc(&s.label)
        );
    }
    let _ = writeln!(svg, "</svg>");

    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, svg)?;
    Ok(())
}
