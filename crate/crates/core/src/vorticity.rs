//! Vorticity / stream-function calculus on P1 fields.
//!
//! The stream function solves `A psi = w` with `psi = 0` on the (single,
//! connected) boundary, the velocity is `curl* psi = (-d2 psi, d1 psi)`,
//! constant on each triangle, and the convection term `u . grad w` is
//! tested with the skew-symmetrized pairing
//! `b(u, w, v) = 1/2 [ (u . grad w, v) - (u . grad v, w) ]`.
//! `b(u, w, w) = 0` holds algebraically.

use crate::fem::{DirichletSolver, FemError, P1Space};

/// Piecewise-constant velocity, one vector per triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField(pub Vec<[f64; 2]>);

impl VelocityField {
    /// `sum_T area_T |u_T|^2`.
    pub fn energy(&self, space: &P1Space) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(t, u)| space.mesh().triangle_area(t) * (u[0] * u[0] + u[1] * u[1]))
            .sum()
    }

    /// Area-weighted nodal average, for plotting only.
    pub fn nodal_average(&self, space: &P1Space) -> Vec<[f64; 2]> {
        let mesh = space.mesh();
        let mut acc = vec![[0.0; 2]; mesh.num_nodes()];
        let mut wsum = vec![0.0; mesh.num_nodes()];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let a = mesh.triangle_area(t);
            for &v in tri {
                acc[v][0] += a * self.0[t][0];
                acc[v][1] += a * self.0[t][1];
                wsum[v] += a;
            }
        }
        acc.iter().zip(&wsum).map(|(u, w)| [u[0] / w, u[1] / w]).collect()
    }
}

/// Factorized Dirichlet Laplacian for repeated stream-function solves.
#[derive(Debug, Clone)]
pub struct StreamSolver {
    solver: DirichletSolver,
}

impl StreamSolver {
    pub fn new(space: &P1Space) -> Result<Self, FemError> {
        Ok(StreamSolver { solver: DirichletSolver::new(space.mesh(), space.stiffness())? })
    }

    /// `psi = A^{-1} w`, vanishing on the boundary.
    pub fn stream_function(&self, space: &P1Space, w: &[f64]) -> Vec<f64> {
        let rhs = space.mass().mul_vec(w);
        self.solver.solve(&rhs, None)
    }

    /// `u = curl* A^{-1} w`, per triangle.
    pub fn velocity(&self, space: &P1Space, w: &[f64]) -> VelocityField {
        curl_star(space, &self.stream_function(space, w))
    }

    /// Weak convection load `b(u(w), w, v_i)` for every hat function `v_i`.
    pub fn convection(&self, space: &P1Space, w: &[f64]) -> Vec<f64> {
        let u = self.velocity(space, w);
        skew_convection(space, &u, w)
    }

    /// Derivative of `convection` at `w_about` in direction `z`:
    /// `b(u(z), w_about, v) + b(u(w_about), z, v)`.
    pub fn linearized_convection(&self, space: &P1Space, w_about: &[f64], z: &[f64]) -> Vec<f64> {
        let uz = self.velocity(space, z);
        let uw = self.velocity(space, w_about);
        let mut out = skew_convection(space, &uz, w_about);
        for (o, v) in out.iter_mut().zip(skew_convection(space, &uw, z)) {
            *o += v;
        }
        out
    }
}

/// `curl* psi = (-d psi/dx2, d psi/dx1)` on each triangle.
pub fn curl_star(space: &P1Space, psi: &[f64]) -> VelocityField {
    let mesh = space.mesh();
    let u = mesh
        .triangles()
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let g = mesh.hat_gradients(t);
            let mut grad = [0.0; 2];
            for k in 0..3 {
                grad[0] += psi[tri[k]] * g[k][0];
                grad[1] += psi[tri[k]] * g[k][1];
            }
            [-grad[1], grad[0]]
        })
        .collect();
    VelocityField(u)
}

/// `b(u, w, v_i) = 1/2 [ (u . grad w, v_i) - (u . grad v_i, w) ]`, integrated
/// exactly for piecewise-constant `u` and P1 `w`, `v_i`.
pub fn skew_convection(space: &P1Space, u: &VelocityField, w: &[f64]) -> Vec<f64> {
    let mesh = space.mesh();
    let mut out = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(t);
        let g = mesh.hat_gradients(t);
        let ut = u.0[t];
        let (w0, w1, w2) = (w[tri[0]], w[tri[1]], w[tri[2]]);
        let gw = [
            w0 * g[0][0] + w1 * g[1][0] + w2 * g[2][0],
            w0 * g[0][1] + w1 * g[1][1] + w2 * g[2][1],
        ];
        let adv = (ut[0] * gw[0] + ut[1] * gw[1]) * area / 3.0;
        let mean = area * (w0 + w1 + w2) / 3.0;
        for k in 0..3 {
            let ugv = ut[0] * g[k][0] + ut[1] * g[k][1];
            out[tri[k]] += 0.5 * (adv - ugv * mean);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{dot, interpolate};
    use crate::mesh::{build_mesh, DomainSpec, MeshOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space() -> P1Space {
        let spec = DomainSpec::Triangle { vertices: [[0.0, 0.0], [1.0, 0.0], [1.0 / 3.0, 2.0 / 3.0]] };
        P1Space::new(build_mesh(&spec, &[], MeshOptions { h: 0.08 }).unwrap())
    }

    fn random_interior(space: &P1Space, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..space.dim())
            .map(|i| if space.mesh().is_boundary(i) { 0.0 } else { rng.gen_range(-1.0..1.0) })
            .collect()
    }

    #[test]
    fn zero_vorticity_gives_zero_flow() {
        let s = space();
        let ss = StreamSolver::new(&s).unwrap();
        let z = vec![0.0; s.dim()];
        assert!(ss.stream_function(&s, &z).iter().all(|&v| v == 0.0));
        assert!(ss.velocity(&s, &z).0.iter().all(|u| *u == [0.0, 0.0]));
        assert!(ss.convection(&s, &z).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stream_function_is_linear() {
        let s = space();
        let ss = StreamSolver::new(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w1 = random_interior(&s, &mut rng);
        let w2 = random_interior(&s, &mut rng);
        let combo: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let p1 = ss.stream_function(&s, &w1);
        let p2 = ss.stream_function(&s, &w2);
        let pc = ss.stream_function(&s, &combo);
        let scale = pc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..s.dim() {
            assert!((pc[i] - (2.0 * p1[i] - 0.5 * p2[i])).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn velocity_of_manufactured_stream_function() {
        let s = space();
        let psi = interpolate(s.mesh(), |p| p[0] * p[1]);
        let u = curl_star(&s, &psi);
        for (t, tri) in s.mesh().triangles().iter().enumerate() {
            // gradient of the interpolant from finite differences of vertex values
            let [a, b, c] = tri.map(|v| s.mesh().nodes()[v]);
            let (fa, fb, fc) = (a[0] * a[1], b[0] * b[1], c[0] * c[1]);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            let gx = ((fb - fa) * (c[1] - a[1]) - (fc - fa) * (b[1] - a[1])) / det;
            let gy = ((fc - fa) * (b[0] - a[0]) - (fb - fa) * (c[0] - a[0])) / det;
            assert!((u.0[t][0] + gy).abs() < 1e-12);
            assert!((u.0[t][1] - gx).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_identity_and_skew_symmetry() {
        let s = space();
        let ss = StreamSolver::new(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let w = random_interior(&s, &mut rng);
            let psi = ss.stream_function(&s, &w);
            let lhs = ss.velocity(&s, &w).energy(&s);
            let rhs = s.inner_h(&w, &psi);
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs());
            let c = ss.convection(&s, &w);
            assert!(dot(&w, &c).abs() <= 1e-12 * s.norm_h(&w) * s.seminorm_v(&w));
        }
    }

    #[test]
    fn linearization_vanishes_on_zero_arguments() {
        let s = space();
        let ss = StreamSolver::new(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_interior(&s, &mut rng);
        let z = vec![0.0; s.dim()];
        assert!(ss.linearized_convection(&s, &w, &z).iter().all(|&v| v == 0.0));
        assert!(ss.linearized_convection(&s, &z, &w).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linearization_is_first_order_consistent() {
        let s = space();
        let ss = StreamSolver::new(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_interior(&s, &mut rng);
        let z = random_interior(&s, &mut rng);
        let base = ss.convection(&s, &w);
        let lin = ss.linearized_convection(&s, &w, &z);
        let mut residuals = Vec::new();
        for eps in [1e-2, 1e-3, 1e-4] {
            let we: Vec<f64> = w.iter().zip(&z).map(|(a, b)| a + eps * b).collect();
            let ce = ss.convection(&s, &we);
            let r: f64 = (0..s.dim()).map(|i| (ce[i] - base[i] - eps * lin[i]).powi(2)).sum::<f64>().sqrt();
            residuals.push(r);
        }
        // the convection map is quadratic, so the remainder is exactly O(eps^2)
        for k in 0..2 {
            let slope = (residuals[k] / residuals[k + 1]).log10();
            assert!((slope - 2.0).abs() < 0.05, "slope {slope}");
        }
        let _ = rng.gen::<f64>();
    }
}
