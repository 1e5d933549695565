//! Filled-contour SVG rendering of P1 fields.
//!
//! Each triangle is clipped against every value band `[l_k, l_{k+1}]`. The
//! field is linear on a triangle, and the clipped piece is a convex polygon
//! found by two half-plane cuts in value space.

use std::fmt::Write as _;

use crate::fem::P1Space;
use crate::geometry::Point;

const BANDS: usize = 16;

/// A vertex carrying its field value.
type Node = (Point, f64);

/// Keeps the part of a convex polygon where `sign * (value - level) >= 0`.
fn cut(poly: &[Node], level: f64, sign: f64) -> Vec<Node> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let (p, fp) = poly[i];
        let (q, fq) = poly[(i + 1) % poly.len()];
        let (sp, sq) = (sign * (fp - level), sign * (fq - level));
        if sp >= 0.0 {
            out.push((p, fp));
        }
        if (sp >= 0.0) != (sq >= 0.0) {
            let t = sp / (sp - sq);
            out.push(([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])], level));
        }
    }
    out
}

/// Diverging blue-white-red map on `[0, 1]`.
fn color(s: f64) -> String {
    let s = s.clamp(0.0, 1.0);
    let (r, g, b) = if s < 0.5 {
        let u = s / 0.5;
        (0.23 + 0.77 * u, 0.30 + 0.70 * u, 0.75 + 0.25 * u)
    } else {
        let u = (s - 0.5) / 0.5;
        (1.0 - 0.29 * u, 1.0 - 0.98 * u, 1.0 - 0.85 * u)
    };
    format!("#{:02x}{:02x}{:02x}", (r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8)
}

/// Renders `field` over the mesh of `space` as an SVG document `width` pixels wide.
pub fn render(space: &P1Space, field: &[f64], width: f64, title: &str) -> String {
    let mesh = space.mesh();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in mesh.nodes() {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let scale = width / (hi[0] - lo[0]);
    let height = (hi[1] - lo[1]) * scale;
    let map = |p: Point| ((p[0] - lo[0]) * scale, (hi[1] - p[1]) * scale);

    let vmin = field.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if vmax > vmin { vmax - vmin } else { 1.0 };
    let levels: Vec<f64> = (0..=BANDS).map(|k| vmin + span * k as f64 / BANDS as f64).collect();

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.1}" height="{:.1}" viewBox="0 0 {:.1} {:.1}">"#, width, height + 24.0, width, height + 24.0).unwrap();
    writeln!(s, r#"<title>{title}</title>"#).unwrap();
    for tri in mesh.triangles() {
        let poly: Vec<Node> = tri.iter().map(|&v| (mesh.nodes()[v], field[v])).collect();
        for k in 0..BANDS {
            let mut piece = cut(&poly, levels[k], 1.0);
            if k + 1 < BANDS {
                piece = cut(&piece, levels[k + 1], -1.0);
            }
            if piece.len() < 3 {
                continue;
            }
            let pts: Vec<String> = piece
                .iter()
                .map(|(p, _)| {
                    let (x, y) = map(*p);
                    format!("{x:.3},{y:.3}")
                })
                .collect();
            let c = color((k as f64 + 0.5) / BANDS as f64);
            writeln!(s, r#"<polygon points="{}" fill="{c}" stroke="{c}" stroke-width="0.3"/>"#, pts.join(" ")).unwrap();
        }
    }
    writeln!(s, r#"<text x="4" y="{:.1}" font-family="monospace" font-size="12">{title}: min {vmin:.4e} max {vmax:.4e}</text>"#, height + 17.0).unwrap();
    s.push_str("</svg>\n");
    s
}
