//! Actuator vorticities and their auxiliary companions.
//!
//! Every actuator lives on a rescaled, translated (and possibly rotated by
//! 180 degrees) copy of the reference square `O = (-1/2, 1/2)^2`. The
//! actuator vorticity `phi_j` is the reference bump `phi` pulled back to
//! its support, and the auxiliary `phi~_j` is the smoother bump `phi~`
//! pulled back the same way.
//!
//! Two layouts are provided. On a rectangle `(0, L1) x (0, L2)` the family
//! for index `M` has `M^2` actuators of size `r/M` centered at
//! `((2 j1 + 1) L1 / (2M), (2 j2 + 1) L2 / (2M))`, `j1, j2 = 0..M-1`. On a
//! triangle, the `M = 1` configuration is copied into each of the
//! `4^(M-1)` similar sub-triangles of the `(M-1)`-fold red subdivision,
//! the middle sub-triangle receiving a copy rotated by 180 degrees.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::fem::P1Space;
use crate::geometry::{self, classify_convex, Point, Side};
use crate::mesh::Mesh;

#[derive(Debug, Error)]
pub enum ActuatorError {
    #[error("actuator scale r = {r} outside (0, {max})")]
    RadiusOutOfRange { r: f64, max: f64 },
    #[error("M must be at least 1")]
    ZeroM,
    #[error("actuator {0} does not fit strictly inside the domain")]
    SupportOutside(usize),
    #[error("mesh is not aligned with the support of actuator {0}")]
    NotAligned(usize),
    #[error("supports of actuators {0} and {1} share a triangle")]
    Overlap(usize, usize),
    #[error("actuator {0} has no interior mesh node; refine the mesh")]
    Unresolved(usize),
    #[error("Gram matrix entry ({i}, {j}) = {value:e} violates the diagonal structure")]
    GramStructure { i: usize, j: usize, value: f64 },
}

/// Reference functions on `O = (-1/2, 1/2)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceBump {
    /// `phi = 1`.
    Indicator,
    /// `phi~ = sin(pi (x1 + 1/2)) sin(pi (x2 + 1/2))`, vanishing on the boundary of `O`.
    SineProduct,
}

impl ReferenceBump {
    /// Value at a reference point; zero outside the closed square.
    pub fn eval(self, xbar: Point) -> f64 {
        if xbar[0].abs() > 0.5 || xbar[1].abs() > 0.5 {
            return 0.0;
        }
        match self {
            ReferenceBump::Indicator => 1.0,
            ReferenceBump::SineProduct => (PI * (xbar[0] + 0.5)).sin() * (PI * (xbar[1] + 0.5)).sin(),
        }
    }
}

/// The pair `(phi, phi~)` used throughout: the indicator and the sine product.
pub fn default_bumps() -> (ReferenceBump, ReferenceBump) {
    (ReferenceBump::Indicator, ReferenceBump::SineProduct)
}

/// One actuator support `center + size * Q O` where `Q = orientation * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorSite {
    pub center: Point,
    pub size: f64,
    /// `+1` or `-1` (rotation by 180 degrees).
    pub orientation: f64,
    /// Counterclockwise support polygon.
    pub support: Vec<Point>,
}

impl ActuatorSite {
    fn new(center: Point, size: f64, orientation: f64) -> Self {
        let h = 0.5 * size;
        let support = vec![
            [center[0] - h, center[1] - h],
            [center[0] + h, center[1] - h],
            [center[0] + h, center[1] + h],
            [center[0] - h, center[1] + h],
        ];
        ActuatorSite { center, size, orientation, support }
    }

    /// Reference coordinates of a physical point.
    pub fn to_reference(&self, x: Point) -> Point {
        let s = self.orientation / self.size;
        [s * (x[0] - self.center[0]), s * (x[1] - self.center[1])]
    }

    pub fn volume(&self) -> f64 {
        self.size * self.size
    }
}

/// Placement of the single `M = 1` actuator inside a triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrianglePlacement {
    /// Barycentric coordinates of the square center; `None` means the incenter.
    pub anchor: Option<[f64; 3]>,
    /// Side of the square relative to `2 r_in / sqrt(2)`, the side of the
    /// square inscribed in the incircle.
    pub side_ratio: f64,
}

impl Default for TrianglePlacement {
    fn default() -> Self {
        TrianglePlacement { anchor: None, side_ratio: 0.3 }
    }
}

/// Geometry of an actuator family, before any mesh is involved.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorLayout {
    pub m: usize,
    pub sites: Vec<ActuatorSite>,
}

impl ActuatorLayout {
    pub fn empty() -> Self {
        ActuatorLayout { m: 0, sites: Vec::new() }
    }

    pub fn count(&self) -> usize {
        self.sites.len()
    }

    pub fn supports(&self) -> Vec<Vec<Point>> {
        self.sites.iter().map(|s| s.support.clone()).collect()
    }

    pub fn total_volume(&self) -> f64 {
        self.sites.iter().map(ActuatorSite::volume).sum()
    }

    /// Smallest distance between two actuator centers.
    pub fn min_center_distance(&self) -> f64 {
        let mut d = f64::INFINITY;
        for i in 0..self.sites.len() {
            for j in (i + 1)..self.sites.len() {
                d = d.min(geometry::distance(self.sites[i].center, self.sites[j].center));
            }
        }
        d
    }

    /// CSV dump: `j,cx,cy,scale,support_vertices...` with the support
    /// vertices flattened as `x,y` pairs.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("j,cx,cy,scale,support_vertices\n");
        for (j, site) in self.sites.iter().enumerate() {
            write!(s, "{},{:.16e},{:.16e},{:.16e}", j + 1, site.center[0], site.center[1], site.size).unwrap();
            for p in &site.support {
                write!(s, ",{:.16e},{:.16e}", p[0], p[1]).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// `M^2` actuators of size `r/M` on `(0, l1) x (0, l2)`.
pub fn rectangle_layout(l1: f64, l2: f64, r: f64, m: usize) -> Result<ActuatorLayout, ActuatorError> {
    if m == 0 {
        return Err(ActuatorError::ZeroM);
    }
    let max = 0.5 * l1.min(l2);
    if !(r > 0.0 && r < max) {
        return Err(ActuatorError::RadiusOutOfRange { r, max });
    }
    let mf = m as f64;
    let mut sites = Vec::with_capacity(m * m);
    for j2 in 0..m {
        for j1 in 0..m {
            let c = [(2 * j1 + 1) as f64 * l1 / (2.0 * mf), (2 * j2 + 1) as f64 * l2 / (2.0 * mf)];
            sites.push(ActuatorSite::new(c, r / mf, 1.0));
        }
    }
    Ok(ActuatorLayout { m, sites })
}

/// Similarity `x -> scale * x + offset` with `scale` possibly negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub offset: Point,
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity { scale: 1.0, offset: [0.0, 0.0] };

    pub fn apply(&self, x: Point) -> Point {
        [self.scale * x[0] + self.offset[0], self.scale * x[1] + self.offset[1]]
    }

    /// `self o other`.
    pub fn compose(&self, other: &Similarity) -> Similarity {
        Similarity { scale: self.scale * other.scale, offset: self.apply(other.offset) }
    }
}

/// The `4^(M-1)` similarity maps taking a triangle onto the sub-triangles of
/// its `(M-1)`-fold red subdivision. Corner children are homotheties about
/// the vertices; the middle child is the point reflection through the
/// centroid scaled by 1/2.
pub fn subtriangle_maps(vertices: [Point; 3], m: usize) -> Vec<Similarity> {
    let g = [
        (vertices[0][0] + vertices[1][0] + vertices[2][0]) / 3.0,
        (vertices[0][1] + vertices[1][1] + vertices[2][1]) / 3.0,
    ];
    let children = [
        Similarity { scale: 0.5, offset: [0.5 * vertices[0][0], 0.5 * vertices[0][1]] },
        Similarity { scale: 0.5, offset: [0.5 * vertices[1][0], 0.5 * vertices[1][1]] },
        Similarity { scale: 0.5, offset: [0.5 * vertices[2][0], 0.5 * vertices[2][1]] },
        Similarity { scale: -0.5, offset: [1.5 * g[0], 1.5 * g[1]] },
    ];
    let mut maps = vec![Similarity::IDENTITY];
    for _ in 1..m {
        maps = maps.iter().flat_map(|p| children.iter().map(move |c| p.compose(c))).collect();
    }
    maps
}

fn incircle(v: [Point; 3]) -> (Point, f64) {
    let a = geometry::distance(v[1], v[2]);
    let b = geometry::distance(v[2], v[0]);
    let c = geometry::distance(v[0], v[1]);
    let p = a + b + c;
    let center = [(a * v[0][0] + b * v[1][0] + c * v[2][0]) / p, (a * v[0][1] + b * v[1][1] + c * v[2][1]) / p];
    let area = geometry::signed_area(v[0], v[1], v[2]).abs();
    (center, 2.0 * area / p)
}

/// `4^(M-1)` actuators on a triangle, each the `M = 1` square mapped by
/// the similarity of its sub-triangle.
pub fn triangle_layout(vertices: [Point; 3], m: usize, placement: TrianglePlacement) -> Result<ActuatorLayout, ActuatorError> {
    if m == 0 {
        return Err(ActuatorError::ZeroM);
    }
    let (incenter, inradius) = incircle(vertices);
    let center = match placement.anchor {
        None => incenter,
        Some(l) => [
            l[0] * vertices[0][0] + l[1] * vertices[1][0] + l[2] * vertices[2][0],
            l[0] * vertices[0][1] + l[1] * vertices[1][1] + l[2] * vertices[2][1],
        ],
    };
    let side = placement.side_ratio * 2.0 * inradius / 2f64.sqrt();
    let base = ActuatorSite::new(center, side, 1.0);
    let tri: Vec<Point> = if geometry::signed_area(vertices[0], vertices[1], vertices[2]) > 0.0 {
        vertices.to_vec()
    } else {
        vec![vertices[0], vertices[2], vertices[1]]
    };
    let tol = 1e-12 * geometry::distance(vertices[0], vertices[1]);
    if !(side > 0.0) || base.support.iter().any(|&p| classify_convex(p, &tri, tol) != Side::Inside) {
        return Err(ActuatorError::SupportOutside(0));
    }
    let sites = subtriangle_maps(vertices, m)
        .into_iter()
        .map(|s| {
            let c = s.apply(center);
            let orientation = s.scale.signum();
            let mut site = ActuatorSite::new(c, s.scale.abs() * side, orientation);
            // keep the mapped vertex order (a 180 degree rotation preserves orientation)
            site.support = base.support.iter().map(|&p| s.apply(p)).collect();
            site
        })
        .collect();
    Ok(ActuatorLayout { m, sites })
}

/// The discrete actuator family on a support-aligned mesh.
#[derive(Debug, Clone)]
pub struct ActuatorFamily {
    layout: ActuatorLayout,
    bumps: (ReferenceBump, ReferenceBump),
    v_fields: Vec<Vec<f64>>,
    vtilde_fields: Vec<Vec<f64>>,
}

impl ActuatorFamily {
    /// Interpolates the actuator and auxiliary bumps on `mesh`. Nodes on a
    /// support boundary get the midpoint value of the jump of `phi`
    /// (`1/2` for the indicator); `phi~` vanishes there.
    pub fn build(layout: ActuatorLayout, mesh: &Mesh, bumps: (ReferenceBump, ReferenceBump)) -> Result<Self, ActuatorError> {
        let tol = 1e-9 * mesh.length_scale();
        let mut v_fields = Vec::with_capacity(layout.count());
        let mut vtilde_fields = Vec::with_capacity(layout.count());
        for (j, site) in layout.sites.iter().enumerate() {
            if !mesh.is_aligned_with(&site.support) {
                return Err(ActuatorError::NotAligned(j));
            }
            let mut v = vec![0.0; mesh.num_nodes()];
            let mut vt = vec![0.0; mesh.num_nodes()];
            let mut interior = 0;
            for (i, &p) in mesh.nodes().iter().enumerate() {
                match classify_convex(p, &site.support, tol) {
                    Side::Inside => {
                        let xbar = site.to_reference(p);
                        v[i] = bumps.0.eval(xbar);
                        vt[i] = bumps.1.eval(xbar);
                        interior += 1;
                    }
                    Side::OnBoundary => {
                        // one-sided limit from inside, averaged with the zero outside
                        let xbar = site.to_reference(p);
                        let shrink = [xbar[0].clamp(-0.5 + 1e-12, 0.5 - 1e-12), xbar[1].clamp(-0.5 + 1e-12, 0.5 - 1e-12)];
                        v[i] = 0.5 * bumps.0.eval(shrink);
                        vt[i] = 0.0;
                    }
                    Side::Outside => {}
                }
            }
            if interior == 0 {
                return Err(ActuatorError::Unresolved(j));
            }
            v_fields.push(v);
            vtilde_fields.push(vt);
        }
        let family = ActuatorFamily { layout, bumps, v_fields, vtilde_fields };
        family.check_disjoint(mesh)?;
        Ok(family)
    }

    fn touched_triangles(mesh: &Mesh, field: &[f64]) -> Vec<usize> {
        (0..mesh.num_triangles())
            .filter(|&t| mesh.triangles()[t].iter().any(|&v| field[v] != 0.0))
            .collect()
    }

    fn check_disjoint(&self, mesh: &Mesh) -> Result<(), ActuatorError> {
        let sets: Vec<Vec<usize>> = self.v_fields.iter().map(|f| Self::touched_triangles(mesh, f)).collect();
        for i in 0..sets.len() {
            for j in (i + 1)..sets.len() {
                if sets[i].iter().any(|t| sets[j].binary_search(t).is_ok()) {
                    return Err(ActuatorError::Overlap(i, j));
                }
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> &ActuatorLayout {
        &self.layout
    }

    pub fn bumps(&self) -> (ReferenceBump, ReferenceBump) {
        self.bumps
    }

    pub fn m(&self) -> usize {
        self.layout.m
    }

    /// Number of actuators `M_sigma`.
    pub fn count(&self) -> usize {
        self.v_fields.len()
    }

    pub fn actuators(&self) -> &[Vec<f64>] {
        &self.v_fields
    }

    pub fn auxiliaries(&self) -> &[Vec<f64>] {
        &self.vtilde_fields
    }

    /// Measure of the union of supports, summed over mesh triangles.
    pub fn mesh_support_volume(&self, mesh: &Mesh) -> f64 {
        let tol = 1e-9;
        (0..mesh.num_triangles())
            .filter(|&t| {
                let c = mesh.centroid(t);
                self.layout.sites.iter().any(|s| classify_convex(c, &s.support, tol) == Side::Inside)
            })
            .map(|t| mesh.triangle_area(t))
            .sum()
    }

    /// `[(phi_i, phi~_j)_H]`.
    pub fn gram(&self, space: &P1Space) -> DMatrix<f64> {
        let n = self.count();
        let mvt: Vec<Vec<f64>> = self.vtilde_fields.iter().map(|f| space.mass().mul_vec(f)).collect();
        DMatrix::from_fn(n, n, |i, j| crate::fem::dot(&self.v_fields[i], &mvt[j]))
    }
}

/// Returns the Gram matrix `[(phi_i, phi~_j)_H]` after checking that it is
/// diagonal (disjoint supports) with strictly positive diagonal.
pub fn gram_diag_check(family: &ActuatorFamily, space: &P1Space) -> Result<DMatrix<f64>, ActuatorError> {
    let g = family.gram(space);
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let value = g[(i, j)];
            if (i == j && !(value > 0.0)) || (i != j && value != 0.0) {
                return Err(ActuatorError::GramStructure { i, j, value });
            }
        }
    }
    Ok(g)
}
