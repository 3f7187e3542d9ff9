//! Line plots of partial-dependence curves as standalone SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::interpret::PdpCurve;
use crate::{Error, Result};

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
/// Plot area inside the view box: left, top, right, bottom.
pub const PLOT: (f64, f64, f64, f64) = (70.0, 20.0, 620.0, 340.0);

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Axis ranges of a plot. A degenerate range is padded by 1 on each side
/// (or by 5% of the magnitude when that is larger).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = (0.05 * lo.abs()).max(1.0);
        (lo - pad, hi + pad)
    }
}

impl Frame {
    pub fn of(curves: &[PdpCurve]) -> Frame {
        let mut x = (f64::INFINITY, f64::NEG_INFINITY);
        let mut y = (f64::INFINITY, f64::NEG_INFINITY);
        for c in curves {
            for (&g, &v) in c.grid.iter().zip(&c.avg_pred) {
                x = (x.0.min(g), x.1.max(g));
                y = (y.0.min(v), y.1.max(v));
            }
        }
        Frame {
            x: padded(x.0, x.1),
            y: padded(y.0, y.1),
        }
    }

    pub fn map_x(&self, v: f64) -> f64 {
        PLOT.0 + (v - self.x.0) / (self.x.1 - self.x.0) * (PLOT.2 - PLOT.0)
    }

    pub fn map_y(&self, v: f64) -> f64 {
        PLOT.3 - (v - self.y.0) / (self.y.1 - self.y.0) * (PLOT.3 - PLOT.1)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

/// Renders curves of one feature (one polyline per wave, in input order)
/// with `knots` as vertical markers. `x_label` names the feature and its
/// units; `y_label` the averaged prediction.
pub fn render_pdp_svg(curves: &[PdpCurve], knots: &[f64], x_label: &str, y_label: &str) -> Result<String> {
    let first = curves.first().ok_or_else(|| Error::invalid("no curves to plot"))?;
    for c in curves {
        c.validate()?;
        if c.feature != first.feature {
            return Err(Error::invalid(format!(
                "curves mix features `{}` and `{}`",
                first.feature, c.feature
            )));
        }
    }
    let frame = Frame::of(curves);
    let (l, t, r, b) = PLOT;
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<title>{}</title>"#, escape(&first.feature));
    let _ = writeln!(w, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<rect class="frame" x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = frame.x.0 + f * (frame.x.1 - frame.x.0);
        let px = frame.map_x(xv);
        let _ = writeln!(
            w,
            r#"<line class="tick" x1="{px:.2}" y1="{b}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#,
            b + 5.0
        );
        let _ = writeln!(
            w,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            b + 18.0,
            tick_label(xv)
        );
        let yv = frame.y.0 + f * (frame.y.1 - frame.y.0);
        let py = frame.map_y(yv);
        let _ = writeln!(
            w,
            r#"<line class="tick" x1="{:.2}" y1="{py:.2}" x2="{l}" y2="{py:.2}" stroke="black"/>"#,
            l - 5.0
        );
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            l - 8.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        w,
        r#"<text class="xlabel" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 22.0,
        escape(x_label)
    );
    let _ = writeln!(
        w,
        r#"<text class="ylabel" x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(y_label)
    );
    for &k in knots {
        if k < frame.x.0 || k > frame.x.1 {
            continue;
        }
        let px = frame.map_x(k);
        let _ = writeln!(
            w,
            r#"<line class="knot" x1="{px:.2}" y1="{t}" x2="{px:.2}" y2="{b}" stroke="gray" stroke-dasharray="4 3"/>"#
        );
    }
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = c
            .grid
            .iter()
            .zip(&c.avg_pred)
            .map(|(&g, &v)| format!("{:.2},{:.2}", frame.map_x(g), frame.map_y(v)))
            .collect();
        let _ = writeln!(
            w,
            r#"<polyline class="curve" data-wave="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(&c.wave),
            points.join(" ")
        );
        let ly = t + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            w,
            r#"<line class="legend-swatch" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
            r - 90.0,
            ly - 4.0,
            r - 70.0,
            ly - 4.0
        );
        let _ = writeln!(
            w,
            r#"<text class="legend" x="{:.2}" y="{ly:.2}">{}</text>"#,
            r - 64.0,
            escape(&c.wave)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Renders and writes the plot to `path`.
pub fn write_pdp_svg(curves: &[PdpCurve], knots: &[f64], x_label: &str, y_label: &str, path: &Path) -> Result<()> {
    let svg = render_pdp_svg(curves, knots, x_label, y_label)?;
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}
