//! Small planar geometry helpers shared by the mesher and the actuator layouts.

pub type Point = [f64; 2];

/// Signed area of the triangle `(a, b, c)`; positive when counterclockwise.
pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Shoelace area of a simple polygon; positive when counterclockwise.
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc
}

pub fn polygon_centroid(poly: &[Point]) -> Point {
    let n = poly.len();
    let a = polygon_area(poly);
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let cross = p[0] * q[1] - q[0] * p[1];
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    [cx / (6.0 * a), cy / (6.0 * a)]
}

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Euclidean distance from `p` to the closed segment `[a, b]`.
pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return distance(p, a);
    }
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    distance(p, [a[0] + t * d[0], a[1] + t * d[1]])
}

/// Distance from `p` to the boundary of a polygon.
pub fn boundary_distance(p: Point, poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| segment_distance(p, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Where a point sits relative to a convex polygon, with a boundary band of width `tol`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Inside,
    OnBoundary,
    Outside,
}

/// Classifies `p` against a counterclockwise convex polygon.
pub fn classify_convex(p: Point, poly: &[Point], tol: f64) -> Side {
    if boundary_distance(p, poly) <= tol {
        return Side::OnBoundary;
    }
    let n = poly.len();
    let inside = (0..n).all(|i| signed_area(poly[i], poly[(i + 1) % n], p) > 0.0);
    if inside {
        Side::Inside
    } else {
        Side::Outside
    }
}

/// Whether two closed segments intersect (including touching).
pub fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    fn orient(a: Point, b: Point, c: Point) -> f64 {
        signed_area(a, b, c)
    }
    fn on_segment(a: Point, b: Point, p: Point) -> bool {
        p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
    }
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Barycentric coordinates of `p` with respect to the triangle `(a, b, c)`.
pub fn barycentric(p: Point, a: Point, b: Point, c: Point) -> [f64; 3] {
    let area = signed_area(a, b, c);
    let l0 = signed_area(p, b, c) / area;
    let l1 = signed_area(a, p, c) / area;
    [l0, l1, 1.0 - l0 - l1]
}

/// Sutherland-Hodgman clipping of `subject` against a counterclockwise
/// convex polygon `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = subject.to_vec();
    let n = clip.len();
    for k in 0..n {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[k], clip[(k + 1) % n]);
        let input = std::mem::take(&mut out);
        let m = input.len();
        for i in 0..m {
            let p = input[i];
            let q = input[(i + 1) % m];
            let sp = signed_area(a, b, p);
            let sq = signed_area(a, b, q);
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_area_and_centroid() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert_eq!(polygon_area(&sq), 1.0);
        assert_eq!(polygon_centroid(&sq), [0.5, 0.5]);
    }

    #[test]
    fn classify_square() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert_eq!(classify_convex([0.5, 0.5], &sq, 1e-12), Side::Inside);
        assert_eq!(classify_convex([1.0, 0.3], &sq, 1e-12), Side::OnBoundary);
        assert_eq!(classify_convex([1.5, 0.3], &sq, 1e-12), Side::Outside);
    }

    #[test]
    fn clip_half_overlap() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let shifted = [[0.5, 0.0], [1.5, 0.0], [1.5, 1.0], [0.5, 1.0]];
        assert!((polygon_area(&clip_convex(&shifted, &sq)) - 0.5).abs() < 1e-15);
        let far = [[2.0, 2.0], [3.0, 2.0], [3.0, 3.0]];
        assert_eq!(polygon_area(&clip_convex(&far, &sq)), 0.0);
    }

    #[test]
    fn crossing_segments() {
        assert!(segments_intersect([0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]));
        assert!(!segments_intersect([0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]));
    }
}
