//! Minimal deterministic SVG line charts for simulation output. No
//! external renderer; the output is plain text SVG, stable across runs for
//! identical inputs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];
/// Points per polyline after downsampling.
const MAX_POINTS: usize = 2000;

pub struct Series<'a> {
    pub name: String,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

fn extent(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Render a line chart to an SVG file.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
) -> Result<()> {
    let (x_lo, x_hi) = extent(series.iter().flat_map(|s| s.x.iter().copied()))
        .ok_or_else(|| Error::Config("nothing to plot".into()))?;
    let (mut y_lo, mut y_hi) = extent(series.iter().flat_map(|s| s.y.iter().copied()))
        .ok_or_else(|| Error::Config("nothing to plot".into()))?;
    if y_hi - y_lo < 1e-12 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let pad = 0.04 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo).max(1e-300) * plot_w;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"##
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="white"/>"##);
    let _ = writeln!(
        svg,
        r##"<text x="{:.1}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"##,
        MARGIN_L + plot_w / 2.0,
        title
    );

    // axes and tick labels
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x_lo + f * (x_hi - x_lo);
        let yv = y_lo + f * (y_hi - y_lo);
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{:.4}</text>"##,
            sx(xv),
            HEIGHT - MARGIN_B + 16.0,
            xv
        );
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{:.4}</text>"##,
            MARGIN_L - 6.0,
            sy(yv) + 4.0,
            yv
        );
        if i > 0 && i < 4 {
            let _ = writeln!(
                svg,
                r##"<line x1="{MARGIN_L}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#ddd"/>"##,
                sy(yv),
                MARGIN_L + plot_w
            );
        }
    }
    let _ = writeln!(
        svg,
        r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"##,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 10.0,
        x_label
    );
    let _ = writeln!(
        svg,
        r##"<text x="16" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 16 {0:.1})">{1}</text>"##,
        MARGIN_T + plot_h / 2.0,
        y_label
    );

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let stride = (s.x.len() / MAX_POINTS).max(1);
        let mut points = String::new();
        for (i, (&x, &y)) in s.x.iter().zip(s.y).enumerate() {
            if i % stride == 0 || i == s.x.len() - 1 {
                let _ = write!(points, "{:.2},{:.2} ", sx(x), sy(y));
            }
        }
        let _ = writeln!(
            svg,
            r##"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"##,
            points.trim_end()
        );
        let ly = MARGIN_T + 18.0 * si as f64 + 10.0;
        let lx = MARGIN_L + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"##,
            lx + 22.0
        );
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"##,
            lx + 28.0,
            ly + 4.0,
            s.name
        );
    }
    let _ = writeln!(svg, "</svg>");

    std::fs::write(path, svg).map_err(Error::Io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let x: Vec<f64> = (0..500).map(|i| i as f64 * 0.01).collect();
        let y: Vec<f64> = x.iter().map(|t| (t * 3.0).sin()).collect();
        let s = [Series { name: "sine".into(), x: &x, y: &y }];
        let p1 = dir.path().join("a.svg");
        let p2 = dir.path().join("b.svg");
        line_chart(&p1, "t", "x", "y", &s).unwrap();
        line_chart(&p2, "t", "x", "y", &s).unwrap();
        let a = std::fs::read(&p1).unwrap();
        let b = std::fs::read(&p2).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
        assert!(String::from_utf8(a).unwrap().starts_with("<svg"));
    }
}
