//! Minimal standalone SVG scatter plots of 2-D sample clouds.

use std::fmt::Write as _;

use flowlab_core::{FlowError, Tensor};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 40.0;
const LEGEND_W: f64 = 120.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series<'a> {
    pub label: &'a str,
    pub samples: &'a Tensor,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders every series into one plot with an axis box and a legend. The
/// output depends only on the input values.
pub fn render_scatter(series: &[Series<'_>]) -> Result<String, FlowError> {
    for s in series {
        if s.samples.row_len() != 2 || s.samples.ndim() != 2 {
            return Err(FlowError::UnsupportedDimension(s.samples.row_len()));
        }
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for row in series.iter().flat_map(|s| s.samples.rows()) {
        for c in 0..2 {
            if row[c].is_finite() {
                lo[c] = lo[c].min(row[c]);
                hi[c] = hi[c].max(row[c]);
            }
        }
    }
    for c in 0..2 {
        if !(lo[c] <= hi[c]) {
            (lo[c], hi[c]) = (-1.0, 1.0);
        } else if hi[c] - lo[c] < 1e-9 {
            lo[c] -= 1.0;
            hi[c] += 1.0;
        }
        let pad = 0.05 * (hi[c] - lo[c]);
        lo[c] -= pad;
        hi[c] += pad;
    }

    let plot_w = WIDTH - 2.0 * MARGIN - LEGEND_W;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - lo[0]) / (hi[0] - lo[0]) * plot_w;
    let sy = |y: f64| HEIGHT - MARGIN - (y - lo[1]) / (hi[1] - lo[1]) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let label = |out: &mut String, x: f64, y: f64, anchor: &str, text: &str| {
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{text}</text>"#
        );
    };
    label(&mut out, MARGIN, HEIGHT - MARGIN + 15.0, "start", &format!("{:.2}", lo[0]));
    label(&mut out, MARGIN + plot_w, HEIGHT - MARGIN + 15.0, "end", &format!("{:.2}", hi[0]));
    label(&mut out, MARGIN - 4.0, HEIGHT - MARGIN, "end", &format!("{:.2}", lo[1]));
    label(&mut out, MARGIN - 4.0, MARGIN + 10.0, "end", &format!("{:.2}", hi[1]));

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(out, r#"<g fill="{color}" fill-opacity="0.5">"#);
        for row in s.samples.rows().filter(|r| r[0].is_finite() && r[1].is_finite()) {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5"/>"#, sx(row[0]), sy(row[1]));
        }
        let _ = writeln!(out, "</g>");
        let ly = MARGIN + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - LEGEND_W - MARGIN / 2.0 + 10.0;
        let _ = writeln!(out, r#"<circle cx="{lx:.2}" cy="{:.2}" r="4" fill="{color}"/>"#, ly - 4.0);
        label(&mut out, lx + 10.0, ly, "start", &escape(s.label));
    }
    out.push_str("</svg>\n");
    Ok(out)
}
