//! Scatter-plot panels as standalone SVG.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::Vec2;

pub const MAX_PANELS: usize = 4;

pub struct Panel<'a> {
    pub label: &'a str,
    pub points: &'a [Vec2],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Side-by-side labeled scatter panels over fixed axes. One `<circle>` per
/// point; points outside `bounds` are clipped by the panel.
pub fn render_svg(panels: &[Panel], bounds: [f64; 4], panel_size: f64) -> Result<String> {
    if panels.is_empty() || panels.len() > MAX_PANELS {
        return Err(Error::Argument(format!("plot takes 1 to {MAX_PANELS} panels, got {}", panels.len())));
    }
    let [x0, x1, y0, y1] = bounds;
    if !(x0 < x1 && y0 < y1 && panel_size > 0.0) {
        return Err(Error::Argument(format!("bad plot bounds {bounds:?}")));
    }
    let pad = 24.0;
    let width = panels.len() as f64 * (panel_size + pad) + pad;
    let height = panel_size + 2.0 * pad;
    let mut out = String::new();
    let w = &mut out;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    )
    .unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for (k, p) in panels.iter().enumerate() {
        let left = pad + k as f64 * (panel_size + pad);
        let top = pad;
        writeln!(w, r#"<clipPath id="c{k}"><rect x="{left:.2}" y="{top:.2}" width="{panel_size:.2}" height="{panel_size:.2}"/></clipPath>"#).unwrap();
        writeln!(w, r#"<g class="panel">"#).unwrap();
        writeln!(
            w,
            r#"<rect x="{left:.2}" y="{top:.2}" width="{panel_size:.2}" height="{panel_size:.2}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            left + 0.5 * panel_size,
            top - 8.0,
            escape(p.label)
        )
        .unwrap();
        writeln!(w, r##"<g clip-path="url(#c{k})" fill="#1f5fa8" fill-opacity="0.35">"##).unwrap();
        for q in p.points {
            let cx = left + (q[0] - x0) / (x1 - x0) * panel_size;
            let cy = top + (y1 - q[1]) / (y1 - y0) * panel_size;
            if cx.is_finite() && cy.is_finite() {
                writeln!(w, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="1.2"/>"#).unwrap();
            }
        }
        writeln!(w, "</g>\n</g>").unwrap();
    }
    writeln!(w, "</svg>").unwrap();
    Ok(out)
}
