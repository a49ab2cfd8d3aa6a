//! Standalone scatter plots of 2-dimensional latents.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::latent::Latent;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;
const TICKS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marker {
    Filled(&'static str),
    Outlined(&'static str),
}

#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub label: &'a str,
    pub marker: Marker,
    pub points: &'a [Latent],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(batches: &[Batch]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in batches.iter().flat_map(|b| b.points) {
        for a in 0..2 {
            if p[a].is_finite() {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    for a in 0..2 {
        if lo[a] > hi[a] {
            lo[a] = -1.0;
            hi[a] = 1.0;
        }
        let pad = ((hi[a] - lo[a]) * 0.05).max(0.5);
        lo[a] -= pad;
        hi[a] += pad;
    }
    (lo, hi)
}

/// Renders one marker group per batch plus axes and a legend. Points with
/// non-finite coordinates are skipped.
pub fn scatter_svg(title: &str, batches: &[Batch]) -> Result<String> {
    for b in batches {
        if let Some(p) = b.points.iter().find(|p| p.dim() != 2) {
            return Err(Error::UnsupportedDimension(p.dim()));
        }
    }
    let (lo, hi) = bounds(batches);
    let px = |x: f64| MARGIN + (x - lo[0]) / (hi[0] - lo[0]) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - lo[1]) / (hi[1] - lo[1]) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();

    // axes box and ticks
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    writeln!(s, r#"<g stroke="black" stroke-width="1" fill="none">"#).unwrap();
    writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}"/>"#).unwrap();
    writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/>"#).unwrap();
    for i in 0..TICKS {
        let f = i as f64 / (TICKS - 1) as f64;
        let tx = px(lo[0] + f * (hi[0] - lo[0]));
        let ty = py(lo[1] + f * (hi[1] - lo[1]));
        writeln!(s, r#"<line x1="{tx:.2}" y1="{y0:.2}" x2="{tx:.2}" y2="{:.2}"/>"#, y0 + 5.0).unwrap();
        writeln!(s, r#"<line x1="{:.2}" y1="{ty:.2}" x2="{x0:.2}" y2="{ty:.2}"/>"#, x0 - 5.0).unwrap();
    }
    writeln!(s, "</g>").unwrap();
    writeln!(s, r#"<g fill="black">"#).unwrap();
    for i in 0..TICKS {
        let f = i as f64 / (TICKS - 1) as f64;
        let vx = lo[0] + f * (hi[0] - lo[0]);
        let vy = lo[1] + f * (hi[1] - lo[1]);
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{vx:.2}</text>"#, px(vx), y0 + 18.0).unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{vy:.2}</text>"#, x0 - 8.0, py(vy) + 4.0).unwrap();
    }
    writeln!(s, "</g>").unwrap();

    for b in batches {
        let style = match b.marker {
            Marker::Filled(c) => format!(r#"fill="{c}" fill-opacity="0.7" stroke="none""#),
            Marker::Outlined(c) => format!(r#"fill="none" stroke="{c}" stroke-width="1""#),
        };
        writeln!(s, r#"<g class="batch" data-label="{}" {style}>"#, escape(b.label)).unwrap();
        for p in b.points.iter().filter(|p| p.is_finite()) {
            writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, px(p[0]), py(p[1])).unwrap();
        }
        writeln!(s, "</g>").unwrap();
    }

    writeln!(s, r#"<g class="legend">"#).unwrap();
    for (i, b) in batches.iter().enumerate() {
        let y = MARGIN + 4.0 + 16.0 * i as f64;
        let x = WIDTH - MARGIN - 130.0;
        let style = match b.marker {
            Marker::Filled(c) => format!(r#"fill="{c}""#),
            Marker::Outlined(c) => format!(r#"fill="none" stroke="{c}""#),
        };
        writeln!(s, r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" {style}/>"#, y - 9.0).unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{y:.2}">{}</text>"#, x + 16.0, escape(b.label)).unwrap();
    }
    writeln!(s, "</g>").unwrap();
    writeln!(s, "</svg>").unwrap();
    Ok(s)
}

pub fn render_scatter_svg(title: &str, batches: &[Batch], path: &Path) -> Result<()> {
    let svg = scatter_svg(title, batches)?;
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(n: usize, shift: f64) -> Vec<Latent> {
        (0..n).map(|i| Latent::from([i as f64 * 0.1 + shift, (i % 7) as f64])).collect()
    }

    #[test]
    fn empty_batches_draw_axes_only() {
        let svg = scatter_svg("empty", &[]).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 0);
        assert!(svg.contains("<line"));
    }

    #[test]
    fn one_marker_per_point() {
        let (a, b, c) = (points(100, 0.0), points(100, 3.0), points(100, 6.0));
        let batches = [
            Batch { label: "source", marker: Marker::Filled("gray"), points: &a },
            Batch { label: "edited", marker: Marker::Filled("crimson"), points: &b },
            Batch { label: "target", marker: Marker::Outlined("navy"), points: &c },
        ];
        let svg = scatter_svg("three", &batches).unwrap();
        assert_eq!(svg.matches("<circle").count(), 300);
        assert_eq!(svg, scatter_svg("three", &batches).unwrap());
    }

    #[test]
    fn rejects_other_dimensions() {
        let p = vec![Latent::from([1.0, 2.0, 3.0])];
        let batches = [Batch { label: "x", marker: Marker::Filled("red"), points: &p }];
        assert!(matches!(scatter_svg("bad", &batches), Err(Error::UnsupportedDimension(3))));
    }
}
