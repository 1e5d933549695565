//! P1 finite elements: mass and stiffness assembly, Dirichlet elimination
//! with an explicit lifting, sparse SPD solves, and quadrature loads.

use std::fmt::Write as _;

use sprs::{CsMat, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};
use thiserror::Error;

use crate::geometry::Point;
use crate::mesh::Mesh;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("matrix is not symmetric positive definite (pivot {pivot} = {value:e})")]
    NotSpd { pivot: usize, value: f64 },
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Dirichlet value given on non-boundary node {0}")]
    NotBoundaryNode(usize),
}

/// Sparse symmetric matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    mat: CsMat<f64>,
}

impl SpdMatrix {
    pub fn from_csr(mat: CsMat<f64>) -> Self {
        assert!(mat.is_csr() && mat.rows() == mat.cols());
        SpdMatrix { mat }
    }

    /// Builds from triplets; duplicates are summed in insertion order.
    pub fn from_triplets(n: usize, rows: &[usize], cols: &[usize], vals: &[f64]) -> Self {
        let tri = TriMat::from_triplets((n, n), rows.to_vec(), cols.to_vec(), vals.to_vec());
        SpdMatrix { mat: tri.to_csr() }
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix { mat: CsMat::eye(n) }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn nnz(&self) -> usize {
        self.mat.nnz()
    }

    pub fn as_csr(&self) -> &CsMat<f64> {
        &self.mat
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat.get(i, j).copied().unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim());
        let (indptr, indices, data) = (self.mat.indptr(), self.mat.indices(), self.mat.data());
        let indptr = indptr.raw_storage();
        for i in 0..self.dim() {
            let mut acc = 0.0;
            for k in indptr[i]..indptr[i + 1] {
                acc += data[k] * x[indices[k]];
            }
            y[i] = acc;
        }
    }

    /// `x^T A y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        dot(x, &ay)
    }

    /// `self + alpha * other` (same dimension).
    pub fn add_scaled(&self, alpha: f64, other: &SpdMatrix) -> SpdMatrix {
        let scaled = other.mat.map(|v| alpha * v);
        SpdMatrix { mat: &self.mat + &scaled }
    }

    /// Principal submatrix on `keep` (in the given order).
    pub fn submatrix(&self, keep: &[usize]) -> SpdMatrix {
        let mut local = vec![usize::MAX; self.dim()];
        for (k, &i) in keep.iter().enumerate() {
            local[i] = k;
        }
        let mut tri = TriMat::new((keep.len(), keep.len()));
        for (k, &i) in keep.iter().enumerate() {
            let row = self.mat.outer_view(i).unwrap();
            for (j, &v) in row.iter() {
                if local[j] != usize::MAX {
                    tri.add_triplet(k, local[j], v);
                }
            }
        }
        SpdMatrix { mat: tri.to_csr() }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        let mut d = nalgebra::DMatrix::zeros(n, n);
        for (i, row) in self.mat.outer_iterator().enumerate() {
            for (j, &v) in row.iter() {
                d[(i, j)] += v;
            }
        }
        d
    }

    /// Largest relative asymmetry `|a_ij - a_ji| / max|a|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.mat.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for (i, row) in self.mat.outer_iterator().enumerate() {
            for (j, &v) in row.iter() {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            0.0
        }
    }

    /// Coordinate dump `i j value`, one entry per line, sorted by `(i, j)`.
    pub fn to_coordinate_text(&self) -> String {
        let mut s = String::new();
        for (i, row) in self.mat.outer_iterator().enumerate() {
            let mut entries: Vec<(usize, f64)> = row.iter().map(|(j, &v)| (j, v)).collect();
            entries.sort_by_key(|e| e.0);
            for (j, v) in entries {
                writeln!(s, "{i} {j} {v:.16e}").unwrap();
            }
        }
        s
    }

    pub fn factorize(&self) -> Result<SpdFactor, FemError> {
        SpdFactor::new(self)
    }
}

/// Sparse LDL^T factorization (reverse Cuthill-McKee ordering) of an SPD matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    ldl: LdlNumeric<f64, usize>,
    n: usize,
}

impl SpdFactor {
    pub fn new(a: &SpdMatrix) -> Result<Self, FemError> {
        let n = a.dim();
        let ldl = Ldl::new()
            .numeric(a.mat.view())
            .map_err(|e| FemError::Factorization(format!("{e:?}")))?;
        if let Some((pivot, &value)) = ldl.d().iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
            return Err(FemError::NotSpd { pivot, value });
        }
        Ok(SpdFactor { ldl, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        self.ldl.solve(b)
    }
}

/// Solves `A x = b` for SPD `A` by sparse factorization.
pub fn solve_spd(a: &SpdMatrix, b: &[f64]) -> Result<Vec<f64>, FemError> {
    if b.len() != a.dim() {
        return Err(FemError::DimensionMismatch { expected: a.dim(), got: b.len() });
    }
    Ok(a.factorize()?.solve(b))
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Exact P1 mass matrix: `area/12 * [2 1 1; 1 2 1; 1 1 2]` per triangle.
pub fn assemble_mass(mesh: &Mesh) -> SpdMatrix {
    let nt = mesh.num_triangles();
    let (mut rows, mut cols, mut vals) = (Vec::with_capacity(9 * nt), Vec::with_capacity(9 * nt), Vec::with_capacity(9 * nt));
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.triangle_area(t);
        for i in 0..3 {
            for j in 0..3 {
                rows.push(tri[i]);
                cols.push(tri[j]);
                vals.push(if i == j { a / 6.0 } else { a / 12.0 });
            }
        }
    }
    SpdMatrix::from_triplets(mesh.num_nodes(), &rows, &cols, &vals)
}

/// Exact P1 stiffness matrix `(grad phi_i, grad phi_j)`.
pub fn assemble_stiffness(mesh: &Mesh) -> SpdMatrix {
    let nt = mesh.num_triangles();
    let (mut rows, mut cols, mut vals) = (Vec::with_capacity(9 * nt), Vec::with_capacity(9 * nt), Vec::with_capacity(9 * nt));
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.triangle_area(t);
        let g = mesh.hat_gradients(t);
        for i in 0..3 {
            for j in 0..3 {
                rows.push(tri[i]);
                cols.push(tri[j]);
                vals.push(a * (g[i][0] * g[j][0] + g[i][1] * g[j][1]));
            }
        }
    }
    SpdMatrix::from_triplets(mesh.num_nodes(), &rows, &cols, &vals)
}

/// `sqrt(w^T M w)`.
pub fn norm_h(mass: &SpdMatrix, w: &[f64]) -> Result<f64, FemError> {
    check_len(mass.dim(), w.len())?;
    Ok(mass.inner(w, w).max(0.0).sqrt())
}

/// `sqrt(w^T K w)`.
pub fn seminorm_v(stiffness: &SpdMatrix, w: &[f64]) -> Result<f64, FemError> {
    check_len(stiffness.dim(), w.len())?;
    Ok(stiffness.inner(w, w).max(0.0).sqrt())
}

fn check_len(expected: usize, got: usize) -> Result<(), FemError> {
    if expected == got {
        Ok(())
    } else {
        Err(FemError::DimensionMismatch { expected, got })
    }
}

/// Nodal interpolant of `f`.
pub fn interpolate(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Vec<f64> {
    mesh.nodes().iter().map(|&p| f(p)).collect()
}

/// Symmetric triangle quadrature rules in barycentric coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    /// 3 points, exact for degree 2.
    Degree2,
    /// 7 points, exact for degree 5.
    Degree5,
}

impl Quadrature {
    /// `(barycentric point, weight)` pairs; weights sum to 1.
    pub fn points(self) -> Vec<([f64; 3], f64)> {
        match self {
            Quadrature::Degree2 => {
                let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
                vec![([a, b, b], 1.0 / 3.0), ([b, a, b], 1.0 / 3.0), ([b, b, a], 1.0 / 3.0)]
            }
            Quadrature::Degree5 => {
                let s15 = 15f64.sqrt();
                let a1 = (6.0 - s15) / 21.0;
                let b1 = (9.0 + 2.0 * s15) / 21.0;
                let a2 = (6.0 + s15) / 21.0;
                let b2 = (9.0 - 2.0 * s15) / 21.0;
                let w1 = (155.0 - s15) / 1200.0;
                let w2 = (155.0 + s15) / 1200.0;
                vec![
                    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 9.0 / 40.0),
                    ([b1, a1, a1], w1),
                    ([a1, b1, a1], w1),
                    ([a1, a1, b1], w1),
                    ([b2, a2, a2], w2),
                    ([a2, b2, a2], w2),
                    ([a2, a2, b2], w2),
                ]
            }
        }
    }
}

/// Precomputed physical quadrature nodes for every triangle. Time-dependent
/// loads only re-evaluate the integrand.
#[derive(Debug, Clone)]
pub struct LoadAssembler {
    rule: Vec<([f64; 3], f64)>,
    points: Vec<Point>,
}

impl LoadAssembler {
    pub fn new(mesh: &Mesh, rule: Quadrature) -> Self {
        let rule = rule.points();
        let mut points = Vec::with_capacity(rule.len() * mesh.num_triangles());
        for tri in mesh.triangles() {
            let [a, b, c] = tri.map(|v| mesh.nodes()[v]);
            for (l, _) in &rule {
                points.push([l[0] * a[0] + l[1] * b[0] + l[2] * c[0], l[0] * a[1] + l[1] * b[1] + l[2] * c[1]]);
            }
        }
        LoadAssembler { rule, points }
    }

    /// `F_i = \int f phi_i` by quadrature.
    pub fn assemble(&self, mesh: &Mesh, f: impl Fn(Point) -> f64) -> Vec<f64> {
        let mut load = vec![0.0; mesh.num_nodes()];
        let q = self.rule.len();
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let area = mesh.triangle_area(t);
            for (k, (l, w)) in self.rule.iter().enumerate() {
                let fx = f(self.points[t * q + k]) * w * area;
                for i in 0..3 {
                    load[tri[i]] += fx * l[i];
                }
            }
        }
        load
    }
}

/// `\int f phi_i` for every node.
pub fn load_vector(mesh: &Mesh, rule: Quadrature, f: impl Fn(Point) -> f64) -> Vec<f64> {
    LoadAssembler::new(mesh, rule).assemble(mesh, f)
}

/// A mesh together with its P1 mass and stiffness matrices: the discrete
/// pivot space `H` (mass inner product) and the Dirichlet form of `V`.
#[derive(Debug, Clone)]
pub struct P1Space {
    mesh: Mesh,
    mass: SpdMatrix,
    stiffness: SpdMatrix,
}

impl P1Space {
    pub fn new(mesh: Mesh) -> Self {
        let mass = assemble_mass(&mesh);
        let stiffness = assemble_stiffness(&mesh);
        P1Space { mesh, mass, stiffness }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mass(&self) -> &SpdMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &SpdMatrix {
        &self.stiffness
    }

    pub fn dim(&self) -> usize {
        self.mesh.num_nodes()
    }

    /// `(w, z)_H`.
    pub fn inner_h(&self, w: &[f64], z: &[f64]) -> f64 {
        self.mass.inner(w, z)
    }

    pub fn norm_h(&self, w: &[f64]) -> f64 {
        self.mass.inner(w, w).max(0.0).sqrt()
    }

    pub fn seminorm_v(&self, w: &[f64]) -> f64 {
        self.stiffness.inner(w, w).max(0.0).sqrt()
    }
}

/// Interior system left after eliminating Dirichlet nodes, with the
/// lifting needed to rebuild the full solution.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub matrix: SpdMatrix,
    pub rhs: Vec<f64>,
    pub interior: Vec<usize>,
    /// Full-length vector holding the Dirichlet data on boundary nodes, zero elsewhere.
    pub lifting: Vec<f64>,
}

impl ReducedSystem {
    /// Extends an interior solution by the Dirichlet data.
    pub fn extend(&self, interior_values: &[f64]) -> Vec<f64> {
        let mut full = self.lifting.clone();
        for (k, &i) in self.interior.iter().enumerate() {
            full[i] = interior_values[k];
        }
        full
    }

    pub fn solve(&self) -> Result<Vec<f64>, FemError> {
        Ok(self.extend(&solve_spd(&self.matrix, &self.rhs)?))
    }
}

/// Eliminates boundary nodes from `matrix x = rhs` with `x = g` prescribed
/// on the boundary. `g` lists `(node, value)` pairs; unlisted boundary
/// nodes get zero.
pub fn apply_dirichlet(mesh: &Mesh, matrix: &SpdMatrix, rhs: &[f64], g: &[(usize, f64)]) -> Result<ReducedSystem, FemError> {
    check_len(matrix.dim(), rhs.len())?;
    check_len(mesh.num_nodes(), rhs.len())?;
    let mut lifting = vec![0.0; mesh.num_nodes()];
    for &(node, v) in g {
        if node >= mesh.num_nodes() || !mesh.is_boundary(node) {
            return Err(FemError::NotBoundaryNode(node));
        }
        lifting[node] = v;
    }
    let interior = mesh.interior_nodes();
    let a_lift = matrix.mul_vec(&lifting);
    let reduced_rhs = interior.iter().map(|&i| rhs[i] - a_lift[i]).collect();
    Ok(ReducedSystem { matrix: matrix.submatrix(&interior), rhs: reduced_rhs, interior, lifting })
}

/// A factorized Dirichlet problem for repeated solves with the same
/// matrix and changing load and boundary data.
#[derive(Debug, Clone)]
pub struct DirichletSolver {
    matrix: SpdMatrix,
    factor: SpdFactor,
    interior: Vec<usize>,
    boundary: Vec<usize>,
}

impl DirichletSolver {
    pub fn new(mesh: &Mesh, matrix: &SpdMatrix) -> Result<Self, FemError> {
        check_len(mesh.num_nodes(), matrix.dim())?;
        let interior = mesh.interior_nodes();
        let factor = matrix.submatrix(&interior).factorize()?;
        Ok(DirichletSolver { matrix: matrix.clone(), factor, interior, boundary: mesh.boundary_nodes() })
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    /// Solves with load `rhs` (full length) and Dirichlet data taken from
    /// the boundary entries of `boundary_values` (full length; interior
    /// entries are ignored). `None` means homogeneous data.
    pub fn solve(&self, rhs: &[f64], boundary_values: Option<&[f64]>) -> Vec<f64> {
        let n = self.matrix.dim();
        assert_eq!(rhs.len(), n);
        let mut lifting = vec![0.0; n];
        if let Some(g) = boundary_values {
            for &b in &self.boundary {
                lifting[b] = g[b];
            }
        }
        let a_lift = if boundary_values.is_some() { Some(self.matrix.mul_vec(&lifting)) } else { None };
        let reduced: Vec<f64> = self
            .interior
            .iter()
            .map(|&i| rhs[i] - a_lift.as_ref().map_or(0.0, |a| a[i]))
            .collect();
        let x = self.factor.solve(&reduced);
        for (k, &i) in self.interior.iter().enumerate() {
            lifting[i] = x[k];
        }
        lifting
    }

    /// Solves the homogeneous interior system for an interior-indexed right-hand side.
    pub fn solve_interior(&self, rhs_interior: &[f64]) -> Vec<f64> {
        self.factor.solve(rhs_interior)
    }
}
