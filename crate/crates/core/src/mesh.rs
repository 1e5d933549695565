//! Conforming P1 triangulations of convex polygons.
//!
//! Coarse meshes come from a constrained Delaunay triangulation of a
//! seeded point cloud: the domain boundary and every support polygon are
//! inserted as constraint edges, so each support is a union of whole
//! triangles. Finer levels come from red (midpoint) refinement, which
//! splits every triangle into four similar children.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};
use thiserror::Error;

use crate::geometry::{self, classify_convex, Point, Side};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
    #[error("support polygon {index} is not strictly inside the domain")]
    SupportOutside { index: usize },
    #[error("support polygons {0} and {1} overlap")]
    SupportsOverlap(usize, usize),
    #[error("support polygon {index} is not a union of mesh triangles")]
    NotAligned { index: usize },
    #[error("invalid mesh: {0}")]
    Invalid(String),
    #[error("point ({0}, {1}) lies outside the mesh")]
    PointOutside(f64, f64),
    #[error("triangulation failed: {0}")]
    Triangulation(String),
    #[error("mesh file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The computational domain: a rectangle `(0, l1) x (0, l2)` or a triangle.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Rectangle { l1: f64, l2: f64 },
    Triangle { vertices: [Point; 3] },
}

impl DomainSpec {
    pub fn unit_square() -> Self {
        DomainSpec::Rectangle { l1: 1.0, l2: 1.0 }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        match *self {
            DomainSpec::Rectangle { l1, l2 } => {
                if !(l1 > 0.0 && l2 > 0.0 && l1.is_finite() && l2.is_finite()) {
                    return Err(MeshError::DegenerateDomain(format!("rectangle sides {l1} x {l2}")));
                }
            }
            DomainSpec::Triangle { vertices: [a, b, c] } => {
                let scale = geometry::distance(a, b).max(geometry::distance(b, c)).max(geometry::distance(c, a));
                let area = geometry::signed_area(a, b, c).abs();
                if !(scale.is_finite() && area > 1e-12 * scale * scale) {
                    return Err(MeshError::DegenerateDomain("collinear triangle vertices".into()));
                }
            }
        }
        Ok(())
    }

    /// Corner points in counterclockwise order.
    pub fn corners(&self) -> Vec<Point> {
        match *self {
            DomainSpec::Rectangle { l1, l2 } => vec![[0.0, 0.0], [l1, 0.0], [l1, l2], [0.0, l2]],
            DomainSpec::Triangle { vertices: [a, b, c] } => {
                if geometry::signed_area(a, b, c) > 0.0 {
                    vec![a, b, c]
                } else {
                    vec![a, c, b]
                }
            }
        }
    }

    pub fn area(&self) -> f64 {
        geometry::polygon_area(&self.corners())
    }

    /// Diameter-like length used to scale geometric tolerances.
    pub fn length_scale(&self) -> f64 {
        let c = self.corners();
        let mut d: f64 = 0.0;
        for p in &c {
            for q in &c {
                d = d.max(geometry::distance(*p, *q));
            }
        }
        d
    }
}

/// An immutable conforming triangulation with boundary tagging.
///
/// Triangles are counterclockwise. At refinement level `r > 0` the four
/// children of parent triangle `p` are stored at indices `4p..4p+4`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    refine_level: u32,
    areas: Vec<f64>,
    grads: Vec<[[f64; 2]; 3]>,
}

impl Mesh {
    /// Builds a mesh from raw parts, checking every structural invariant.
    /// Clockwise triangles are reoriented.
    pub fn from_parts(nodes: Vec<Point>, mut triangles: Vec<[usize; 3]>, refine_level: u32) -> Result<Self, MeshError> {
        let n = nodes.len();
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(MeshError::Invalid(format!("triangle {t} references a missing node")));
            }
            let a = geometry::signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if a < 0.0 {
                tri.swap(1, 2);
            }
        }
        let mut mesh = Mesh {
            nodes,
            triangles,
            boundary: Vec::new(),
            refine_level,
            areas: Vec::new(),
            grads: Vec::new(),
        };
        mesh.finish()?;
        Ok(mesh)
    }

    fn finish(&mut self) -> Result<(), MeshError> {
        let mut areas = Vec::with_capacity(self.triangles.len());
        let mut grads = Vec::with_capacity(self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            let [a, b, c] = tri.map(|v| self.nodes[v]);
            let area = geometry::signed_area(a, b, c);
            if !(area > 0.0) {
                return Err(MeshError::Invalid(format!("triangle {t} has nonpositive area {area}")));
            }
            // grad of the barycentric coordinate opposite to each vertex
            let inv = 1.0 / (2.0 * area);
            let g = [
                [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
                [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
                [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
            ];
            areas.push(area);
            grads.push(g);
        }
        let edges = self.edge_map();
        let mut boundary = vec![false; self.nodes.len()];
        for (&(i, j), tris) in &edges {
            match tris.len() {
                1 => {
                    boundary[i] = true;
                    boundary[j] = true;
                }
                2 => {}
                k => return Err(MeshError::Invalid(format!("edge ({i}, {j}) shared by {k} triangles"))),
            }
        }
        let mut used = vec![false; self.nodes.len()];
        for tri in &self.triangles {
            for &v in tri {
                used[v] = true;
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(MeshError::Invalid(format!("node {v} belongs to no triangle")));
        }
        self.areas = areas;
        self.grads = grads;
        self.boundary = boundary;
        Ok(())
    }

    fn edge_map(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut edges: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (i, j) = (tri[k], tri[(k + 1) % 3]);
                edges.entry((i.min(j), i.max(j))).or_default().push(t);
            }
        }
        edges
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn refine_level(&self) -> u32 {
        self.refine_level
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.boundary[i]).collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| !self.boundary[i]).collect()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    /// Constant gradients of the three local hat functions on triangle `t`.
    pub fn hat_gradients(&self, t: usize) -> &[[f64; 2]; 3] {
        &self.grads[t]
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|v| self.nodes[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Sorted list of undirected edges.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = self.edge_map().into_keys().collect();
        e.sort_unstable();
        e
    }

    /// Longest edge length.
    pub fn max_edge_length(&self) -> f64 {
        self.edges()
            .into_iter()
            .map(|(i, j)| geometry::distance(self.nodes[i], self.nodes[j]))
            .fold(0.0, f64::max)
    }

    /// Red refinement: every triangle is split into four similar children
    /// through its edge midpoints. Existing nodes keep their indices; new
    /// midpoint nodes are appended in order of first visit.
    pub fn refine(&self) -> Mesh {
        let mut nodes = self.nodes.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |i: usize, j: usize, nodes: &mut Vec<Point>| -> usize {
            let key = (i.min(j), i.max(j));
            *midpoint.entry(key).or_insert_with(|| {
                let (p, q) = (nodes[i], nodes[j]);
                nodes.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                nodes.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = mid(a, b, &mut nodes);
            let bc = mid(b, c, &mut nodes);
            let ca = mid(c, a, &mut nodes);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        Mesh::from_parts(nodes, triangles, self.refine_level + 1).expect("red refinement of a valid mesh is valid")
    }

    /// Refines `levels` times.
    pub fn refined(&self, levels: u32) -> Mesh {
        let mut m = self.clone();
        for _ in 0..levels {
            m = m.refine();
        }
        m
    }

    /// Finds a triangle containing `x` and the barycentric coordinates of
    /// `x` in it.
    pub fn locate(&self, x: Point) -> Result<(usize, [f64; 3]), MeshError> {
        let tol = 1e-12;
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for (t, tri) in self.triangles.iter().enumerate() {
            let [a, b, c] = tri.map(|v| self.nodes[v]);
            let lam = geometry::barycentric(x, a, b, c);
            let worst = lam.iter().cloned().fold(f64::INFINITY, f64::min);
            if worst >= 0.0 {
                return Ok((t, lam));
            }
            if best.as_ref().map_or(true, |b| worst > b.2) {
                best = Some((t, lam, worst));
            }
        }
        match best {
            Some((t, lam, worst)) if worst >= -tol => {
                let clamped = lam.map(|l| l.max(0.0));
                let s: f64 = clamped.iter().sum();
                Ok((t, clamped.map(|l| l / s)))
            }
            _ => Err(MeshError::PointOutside(x[0], x[1])),
        }
    }

    /// Checks that `poly` (convex, counterclockwise) is a union of whole
    /// triangles of this mesh: each triangle overlaps it fully or not at all.
    pub fn is_aligned_with(&self, poly: &[Point]) -> bool {
        (0..self.triangles.len()).all(|t| {
            let tri: Vec<Point> = self.triangles[t].iter().map(|&v| self.nodes[v]).collect();
            let overlap = geometry::polygon_area(&geometry::clip_convex(&tri, poly));
            let rel = overlap / self.areas[t];
            rel < 1e-9 || rel > 1.0 - 1e-9
        })
    }

    /// Larger side of the bounding box.
    pub fn length_scale(&self) -> f64 {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &self.nodes {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (hi[0] - lo[0]).max(hi[1] - lo[1])
    }

    /// Writes the plain-text mesh format: a header line
    /// `nodes N triangles T level R`, then `x1 x2 is_boundary` per node, then
    /// three zero-based node indices per triangle.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "nodes {} triangles {} level {}", self.nodes.len(), self.triangles.len(), self.refine_level).unwrap();
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(s, "{:.16e} {:.16e} {}", p[0], p[1], u8::from(self.boundary[i])).unwrap();
        }
        for t in &self.triangles {
            writeln!(s, "{} {} {}", t[0], t[1], t[2]).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, MeshError> {
        let bad = |m: &str| MeshError::Format(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file"))?.split_whitespace().collect();
        if header.len() != 6 || header[0] != "nodes" || header[2] != "triangles" || header[4] != "level" {
            return Err(bad("expected header `nodes N triangles T level R`"));
        }
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad integer `{s}`")));
        let n = parse_usize(header[1])?;
        let t = parse_usize(header[3])?;
        let level = header[5].parse::<u32>().map_err(|_| bad("bad level"))?;
        let mut nodes = Vec::with_capacity(n);
        let mut flags = Vec::with_capacity(n);
        for _ in 0..n {
            let f: Vec<&str> = lines.next().ok_or_else(|| bad("missing node line"))?.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad("node line needs `x1 x2 is_boundary`"));
            }
            let x = f[0].parse::<f64>().map_err(|_| bad("bad coordinate"))?;
            let y = f[1].parse::<f64>().map_err(|_| bad("bad coordinate"))?;
            nodes.push([x, y]);
            flags.push(match f[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("boundary flag must be 0 or 1")),
            });
        }
        let mut triangles = Vec::with_capacity(t);
        for _ in 0..t {
            let f: Vec<&str> = lines.next().ok_or_else(|| bad("missing triangle line"))?.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad("triangle line needs three indices"));
            }
            triangles.push([parse_usize(f[0])?, parse_usize(f[1])?, parse_usize(f[2])?]);
        }
        if lines.next().is_some() {
            return Err(bad("trailing data"));
        }
        let mesh = Mesh::from_parts(nodes, triangles, level)?;
        if mesh.boundary != flags {
            return Err(bad("boundary flags disagree with mesh topology"));
        }
        Ok(mesh)
    }

    pub fn write(&self, path: &Path) -> Result<(), MeshError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, MeshError> {
        Mesh::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Target spacing for the coarse mesh generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshOptions {
    /// Approximate edge length away from supports.
    pub h: f64,
}

impl Default for MeshOptions {
    fn default() -> Self {
        MeshOptions { h: 0.1 }
    }
}

/// Builds a coarse conforming mesh of `spec` whose edge set contains the
/// boundary of every polygon in `supports` (convex, counterclockwise,
/// strictly inside the domain, pairwise disjoint).
pub fn build_mesh(spec: &DomainSpec, supports: &[Vec<Point>], opts: MeshOptions) -> Result<Mesh, MeshError> {
    spec.validate()?;
    let domain = spec.corners();
    let scale = spec.length_scale();
    let tol = 1e-9 * scale;
    let h = opts.h;
    if !(h > 0.0 && h < scale) {
        return Err(MeshError::DegenerateDomain(format!("mesh size {h} out of range")));
    }

    for (i, poly) in supports.iter().enumerate() {
        if poly.len() < 3 || geometry::polygon_area(poly) <= 0.0 {
            return Err(MeshError::Invalid(format!("support polygon {i} must be counterclockwise with positive area")));
        }
        if poly.iter().any(|&p| classify_convex(p, &domain, tol) != Side::Inside) {
            return Err(MeshError::SupportOutside { index: i });
        }
    }
    for i in 0..supports.len() {
        for j in (i + 1)..supports.len() {
            if polygons_overlap(&supports[i], &supports[j], tol) {
                return Err(MeshError::SupportsOverlap(i, j));
            }
        }
    }

    // constrained loops: domain boundary, then each support boundary
    let mut loops: Vec<Vec<Point>> = vec![subdivide_loop(&domain, h)];
    let mut seeds: Vec<Point> = Vec::new();
    for poly in supports {
        let min_edge = (0..poly.len())
            .map(|k| geometry::distance(poly[k], poly[(k + 1) % poly.len()]))
            .fold(f64::INFINITY, f64::min);
        let hs = h.min(0.5 * min_edge);
        loops.push(subdivide_loop(poly, hs));
        seeds.extend(support_interior_points(poly, hs));
    }

    // background triangular lattice away from all constraint loops
    let (lo, hi) = bounding_box(&domain);
    let dy = h * 3f64.sqrt() / 2.0;
    let rows = ((hi[1] - lo[1]) / dy).ceil() as usize + 1;
    let cols = ((hi[0] - lo[0]) / h).ceil() as usize + 2;
    for r in 0..rows {
        let y = lo[1] + r as f64 * dy;
        let shift = if r % 2 == 1 { 0.5 * h } else { 0.0 };
        for c in 0..cols {
            let p = [lo[0] + shift + c as f64 * h, y];
            if classify_convex(p, &domain, tol) != Side::Inside || geometry::boundary_distance(p, &domain) < 0.6 * h {
                continue;
            }
            let near_support = supports.iter().any(|poly| {
                classify_convex(p, poly, tol) != Side::Outside || geometry::boundary_distance(p, poly) < 0.6 * h
            });
            if !near_support {
                seeds.push(p);
            }
        }
    }

    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> = ConstrainedDelaunayTriangulation::new();
    let mut loop_handles = Vec::with_capacity(loops.len());
    for lp in &loops {
        let mut hs = Vec::with_capacity(lp.len());
        for p in lp {
            hs.push(cdt.insert(Point2::new(p[0], p[1])).map_err(|e| MeshError::Triangulation(format!("{e:?}")))?);
        }
        loop_handles.push(hs);
    }
    for p in &seeds {
        cdt.insert(Point2::new(p[0], p[1])).map_err(|e| MeshError::Triangulation(format!("{e:?}")))?;
    }
    for hs in &loop_handles {
        for k in 0..hs.len() {
            let (a, b) = (hs[k], hs[(k + 1) % hs.len()]);
            if !cdt.can_add_constraint(a, b) {
                return Err(MeshError::Triangulation("constraint edges intersect".into()));
            }
            cdt.add_constraint(a, b);
        }
    }

    let raw_nodes: Vec<Point> = cdt.vertices().map(|v| [v.position().x, v.position().y]).collect();
    let min_area = 1e-9 * h * h;
    let mut raw_tris = Vec::new();
    for f in cdt.inner_faces() {
        let [a, b, c] = f.vertices().map(|v| v.fix().index());
        let area = geometry::signed_area(raw_nodes[a], raw_nodes[b], raw_nodes[c]);
        // slivers along the hull from nearly collinear boundary points
        if area.abs() < min_area {
            continue;
        }
        raw_tris.push(if area > 0.0 { [a, b, c] } else { [a, c, b] });
    }

    // deterministic numbering: lexicographic in (x2, x1)
    let mut order: Vec<usize> = (0..raw_nodes.len()).collect();
    order.sort_by(|&i, &j| {
        let (p, q) = (raw_nodes[i], raw_nodes[j]);
        p[1].total_cmp(&q[1]).then(p[0].total_cmp(&q[0])).then(i.cmp(&j))
    });
    let mut new_index = vec![usize::MAX; raw_nodes.len()];
    for (k, &i) in order.iter().enumerate() {
        new_index[i] = k;
    }
    let nodes: Vec<Point> = order.iter().map(|&i| raw_nodes[i]).collect();
    let mut triangles: Vec<[usize; 3]> = raw_tris
        .into_iter()
        .map(|t| {
            let t = t.map(|v| new_index[v]);
            // rotate so the smallest index leads, keeping orientation
            let k = (0..3).min_by_key(|&k| t[k]).unwrap();
            [t[k], t[(k + 1) % 3], t[(k + 2) % 3]]
        })
        .collect();
    triangles.sort_unstable();

    let mesh = Mesh::from_parts(nodes, triangles, 0)?;
    let area_err = (mesh.total_area() - spec.area()).abs();
    if area_err > 1e-10 * spec.area() {
        return Err(MeshError::Invalid(format!("triangulated area differs from domain area by {area_err:e}")));
    }
    for (i, poly) in supports.iter().enumerate() {
        if !mesh.is_aligned_with(poly) {
            return Err(MeshError::NotAligned { index: i });
        }
    }
    Ok(mesh)
}

fn bounding_box(poly: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in poly {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Points along a closed polygon with spacing at most `h`.
fn subdivide_loop(poly: &[Point], h: f64) -> Vec<Point> {
    let mut out = Vec::new();
    for k in 0..poly.len() {
        let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
        let n = ((geometry::distance(a, b) / h).ceil() as usize).max(1);
        for i in 0..n {
            let t = i as f64 / n as f64;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Structured grid points strictly inside a support, aligned with its
/// bounding box. Axis-aligned squares get a uniform grid.
fn support_interior_points(poly: &[Point], hs: f64) -> Vec<Point> {
    let (lo, hi) = bounding_box(poly);
    let nx = (((hi[0] - lo[0]) / hs).round() as usize).max(2);
    let ny = (((hi[1] - lo[1]) / hs).round() as usize).max(2);
    let (sx, sy) = ((hi[0] - lo[0]) / nx as f64, (hi[1] - lo[1]) / ny as f64);
    let keep = 0.5 * sx.min(sy);
    let mut pts = Vec::new();
    for j in 1..ny {
        for i in 1..nx {
            let p = [lo[0] + i as f64 * sx, lo[1] + j as f64 * sy];
            if classify_convex(p, poly, 0.0) == Side::Inside && geometry::boundary_distance(p, poly) >= keep * 0.99 {
                pts.push(p);
            }
        }
    }
    if pts.is_empty() {
        pts.push(geometry::polygon_centroid(poly));
    }
    pts
}

fn polygons_overlap(p: &[Point], q: &[Point], tol: f64) -> bool {
    for i in 0..p.len() {
        for j in 0..q.len() {
            if geometry::segments_intersect(p[i], p[(i + 1) % p.len()], q[j], q[(j + 1) % q.len()]) {
                return true;
            }
        }
    }
    classify_convex(p[0], q, tol) != Side::Outside || classify_convex(q[0], p, tol) != Side::Outside
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangle_square() -> Mesh {
        Mesh::from_parts(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], vec![[0, 1, 2], [0, 2, 3]], 0).unwrap()
    }

    fn square(c: Point, s: f64) -> Vec<Point> {
        let h = 0.5 * s;
        vec![[c[0] - h, c[1] - h], [c[0] + h, c[1] - h], [c[0] + h, c[1] + h], [c[0] - h, c[1] + h]]
    }

    #[test]
    fn rectangle_corners_are_nodes() {
        let m = build_mesh(&DomainSpec::unit_square(), &[], MeshOptions { h: 0.2 }).unwrap();
        for c in [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]] {
            let i = m.nodes().iter().position(|p| *p == c).expect("corner missing");
            assert!(m.is_boundary(i));
        }
        assert!((m.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn support_edges_appear_in_triangle_mesh() {
        let spec = DomainSpec::Triangle { vertices: [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] };
        let sq = square([0.3, 0.3], 0.2);
        let m = build_mesh(&spec, &[sq.clone()], MeshOptions { h: 0.08 }).unwrap();
        // every support side is covered by collinear mesh edges
        let tol = 1e-12;
        for k in 0..4 {
            let (a, b) = (sq[k], sq[(k + 1) % 4]);
            let mut covered = 0.0;
            for (i, j) in m.edges() {
                let (p, q) = (m.nodes()[i], m.nodes()[j]);
                if geometry::segment_distance(p, a, b) < tol && geometry::segment_distance(q, a, b) < tol {
                    covered += geometry::distance(p, q);
                }
            }
            assert!((covered - 0.2).abs() < 1e-12, "side {k} covered {covered}");
        }
        assert!(m.is_aligned_with(&sq));
    }

    #[test]
    fn support_touching_boundary_is_rejected() {
        let spec = DomainSpec::Rectangle { l1: 2.0, l2: 1.0 };
        let sq = vec![[0.0, 0.2], [0.3, 0.2], [0.3, 0.5], [0.0, 0.5]];
        assert!(matches!(build_mesh(&spec, &[sq], MeshOptions::default()), Err(MeshError::SupportOutside { .. })));
    }

    #[test]
    fn degenerate_domains_are_rejected() {
        assert!(DomainSpec::Rectangle { l1: 0.0, l2: 1.0 }.validate().is_err());
        let flat = DomainSpec::Triangle { vertices: [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]] };
        assert!(build_mesh(&flat, &[], MeshOptions::default()).is_err());
    }

    #[test]
    fn red_refinement_counts() {
        let m = two_triangle_square();
        let r = m.refine();
        assert_eq!(r.num_triangles(), 8);
        assert_eq!(r.num_nodes(), 9);
        assert_eq!(r.refine_level(), 1);
        assert_eq!(&r.nodes()[..4], m.nodes());
        assert_eq!(r.boundary_nodes().len(), 8);
        let rr = r.refine();
        assert_eq!(rr.num_triangles(), 32);
        assert!((rr.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn locate_centroid_and_vertex() {
        let m = two_triangle_square();
        let c = m.centroid(1);
        let (t, lam) = m.locate(c).unwrap();
        assert_eq!(t, 1);
        for l in lam {
            assert!((l - 1.0 / 3.0).abs() < 1e-12);
        }
        let (_, lam) = m.locate([1.0, 1.0]).unwrap();
        assert!(lam.iter().any(|&l| (l - 1.0).abs() < 1e-12));
        assert!(m.locate([1.5, 0.5]).is_err());
    }

    #[test]
    fn text_format_round_trip() {
        let m = build_mesh(&DomainSpec::unit_square(), &[square([0.5, 0.5], 0.3)], MeshOptions { h: 0.25 }).unwrap();
        let back = Mesh::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert!(Mesh::from_text("nodes 1 triangles 0").is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = DomainSpec::Triangle { vertices: [[0.0, 0.0], [1.0, 0.0], [1.0 / 3.0, 2.0 / 3.0]] };
        let sup = vec![square([0.4, 0.25], 0.1)];
        let a = build_mesh(&spec, &sup, MeshOptions { h: 0.07 }).unwrap().refine();
        let b = build_mesh(&spec, &sup, MeshOptions { h: 0.07 }).unwrap().refine();
        assert_eq!(a.to_text(), b.to_text());
    }
}
