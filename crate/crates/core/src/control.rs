//! Oblique projections, the explicit feedback operator and the
//! Poincare-like constant of an actuator family.
//!
//! For basis fields `F = (f_j)` and `G = (g_i)` the oblique projection onto
//! `span F` along `(span G)^perp` is `P z = F c` with
//! `[(g_i, f_j)_H] c = [(g_i, z)_H]`. The feedback is
//!
//! ```text
//! K z = -lambda P_V^{Vt perp} A P_Vt^{V perp} z
//! ```
//!
//! where `A q` is realized as the mass Riesz representative of the stiffness
//! action, `M (A q) = K_stiff q`. With `B = Phi^T M Phi~` and
//! `S = Phi~^T K_stiff Phi~` this collapses to control coordinates
//! `u = -lambda B^{-T} S B^{-1} s`, where `s_j = (z, phi_j)_H` are the
//! measurements.

use nalgebra::{DMatrix, DVector, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::actuators::ActuatorFamily;
use crate::fem::{dot, FemError, P1Space, SpdMatrix};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("range and co-range bases differ in size ({0} vs {1})")]
    SizeMismatch(usize, usize),
    #[error("cross-Gram matrix is singular (condition estimate {condition:e}); the direct sum fails")]
    SingularGram { condition: f64 },
    #[error("negative feedback gain lambda = {0}")]
    NegativeGain(f64),
    #[error("constraint basis is rank deficient")]
    RankDeficient,
    #[error("eigen-iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error(transparent)]
    Fem(#[from] FemError),
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Oblique projection in `H` onto `span F` along `(span G)^{perp H}`.
#[derive(Debug, Clone)]
pub struct ObliqueProjector {
    range: Vec<Vec<f64>>,
    /// `M g_i`. Moments are plain dot products against these.
    co_range_mass: Vec<Vec<f64>>,
    cross: DMatrix<f64>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl ObliqueProjector {
    pub fn new(range: &[Vec<f64>], co_range: &[Vec<f64>], mass: &SpdMatrix) -> Result<Self, ControlError> {
        if range.len() != co_range.len() {
            return Err(ControlError::SizeMismatch(range.len(), co_range.len()));
        }
        let co_range_mass: Vec<Vec<f64>> = co_range.iter().map(|g| mass.mul_vec(g)).collect();
        let n = range.len();
        let cross = DMatrix::from_fn(n, n, |i, j| dot(&co_range_mass[i], &range[j]));
        Self::assemble(range.to_vec(), co_range_mass, cross)
    }

    /// Builds a projector from an explicitly supplied cross-Gram matrix.
    /// Only meaningful for fault injection; a wrong matrix breaks the
    /// projector identities.
    pub fn from_cross_gram(range: &[Vec<f64>], co_range: &[Vec<f64>], mass: &SpdMatrix, cross: DMatrix<f64>) -> Result<Self, ControlError> {
        if range.len() != co_range.len() || cross.nrows() != range.len() || cross.ncols() != range.len() {
            return Err(ControlError::SizeMismatch(range.len(), co_range.len()));
        }
        let co_range_mass = co_range.iter().map(|g| mass.mul_vec(g)).collect();
        Self::assemble(range.to_vec(), co_range_mass, cross)
    }

    fn assemble(range: Vec<Vec<f64>>, co_range_mass: Vec<Vec<f64>>, cross: DMatrix<f64>) -> Result<Self, ControlError> {
        let condition = condition_estimate(&cross);
        if !(condition < 1e14) {
            return Err(ControlError::SingularGram { condition });
        }
        let lu = cross.clone().lu();
        Ok(ObliqueProjector { range, co_range_mass, cross, lu })
    }

    pub fn rank(&self) -> usize {
        self.range.len()
    }

    /// `[(g_i, f_j)_H]`.
    pub fn cross_gram(&self) -> &DMatrix<f64> {
        &self.cross
    }

    pub fn condition(&self) -> f64 {
        condition_estimate(&self.cross)
    }

    /// `[(g_i, z)_H]`.
    pub fn moments(&self, z: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.rank(), self.co_range_mass.iter().map(|g| dot(g, z)))
    }

    /// Solves `[(g_i, f_j)_H] c = moments`.
    pub fn coefficients_from_moments(&self, moments: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(moments).expect("cross-Gram factorization checked at construction")
    }

    pub fn coefficients(&self, z: &[f64]) -> DVector<f64> {
        self.coefficients_from_moments(&self.moments(z))
    }

    /// `sum_j c_j f_j`.
    pub fn combine(&self, c: &DVector<f64>) -> Vec<f64> {
        let n = self.range.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for (f, &cj) in self.range.iter().zip(c.iter()) {
            for (o, v) in out.iter_mut().zip(f) {
                *o += cj * v;
            }
        }
        out
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        if self.rank() == 0 {
            return vec![0.0; z.len()];
        }
        self.combine(&self.coefficients(z))
    }

    /// `z - P z`, the complementary projection onto `(span G)^perp` along `span F`.
    pub fn apply_complement(&self, z: &[f64]) -> Vec<f64> {
        let p = self.apply(z);
        z.iter().zip(&p).map(|(a, b)| a - b).collect()
    }
}

/// `K = -lambda P_V^{Vt perp} A P_Vt^{V perp}` on P1 fields.
#[derive(Debug, Clone)]
pub struct FeedbackOperator {
    lambda: f64,
    actuators: Vec<Vec<f64>>,
    /// Onto `span Phi` along `(span Phi~)^perp`.
    onto_actuators: ObliqueProjector,
    /// Onto `span Phi~` along `(span Phi)^perp`.
    onto_auxiliary: ObliqueProjector,
    /// `Phi~^T K_stiff Phi~`.
    aux_stiffness: DMatrix<f64>,
    /// `B^{-T} S B^{-1}`, mapping measurements to unit-gain coordinates.
    gain: DMatrix<f64>,
}

impl FeedbackOperator {
    pub fn new(lambda: f64, family: &ActuatorFamily, space: &P1Space) -> Result<Self, ControlError> {
        let onto_actuators = ObliqueProjector::new(family.actuators(), family.auxiliaries(), space.mass())?;
        let onto_auxiliary = ObliqueProjector::new(family.auxiliaries(), family.actuators(), space.mass())?;
        Self::from_projectors(lambda, family.actuators(), onto_actuators, onto_auxiliary, space.stiffness(), family.auxiliaries())
    }

    /// Assembles the operator from prebuilt projectors (used for fault injection).
    pub fn from_projectors(
        lambda: f64,
        actuators: &[Vec<f64>],
        onto_actuators: ObliqueProjector,
        onto_auxiliary: ObliqueProjector,
        stiffness: &SpdMatrix,
        auxiliaries: &[Vec<f64>],
    ) -> Result<Self, ControlError> {
        if !(lambda >= 0.0) {
            return Err(ControlError::NegativeGain(lambda));
        }
        let n = actuators.len();
        let k_aux: Vec<Vec<f64>> = auxiliaries.iter().map(|f| stiffness.mul_vec(f)).collect();
        let aux_stiffness = DMatrix::from_fn(n, n, |i, j| dot(&auxiliaries[i], &k_aux[j]));
        // unit-gain coordinates d = X^{-1} S Y^{-1} s, X and Y the two cross-Grams
        let mut gain = DMatrix::zeros(n, n);
        for j in 0..n {
            let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
            let c = onto_auxiliary.coefficients_from_moments(&e);
            let d = onto_actuators.coefficients_from_moments(&(&aux_stiffness * c));
            gain.set_column(j, &d);
        }
        Ok(FeedbackOperator { lambda, actuators: actuators.to_vec(), onto_actuators, onto_auxiliary, aux_stiffness, gain })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, ControlError> {
        if !(lambda >= 0.0) {
            return Err(ControlError::NegativeGain(lambda));
        }
        Ok(FeedbackOperator { lambda, ..self.clone() })
    }

    pub fn count(&self) -> usize {
        self.actuators.len()
    }

    pub fn actuators(&self) -> &[Vec<f64>] {
        &self.actuators
    }

    pub fn onto_actuators(&self) -> &ObliqueProjector {
        &self.onto_actuators
    }

    pub fn onto_auxiliary(&self) -> &ObliqueProjector {
        &self.onto_auxiliary
    }

    /// `B^{-T} S B^{-1}`; control coordinates are `-lambda * gain * s`.
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// `s_j = (z, phi_j)_H`.
    pub fn measurements(&self, z: &[f64]) -> DVector<f64> {
        self.onto_auxiliary.moments(z)
    }

    /// Unit-gain coordinates computed through the two projections.
    fn unit_coordinates(&self, z: &[f64]) -> DVector<f64> {
        let c = self.onto_auxiliary.coefficients(z);
        // moments of M^{-1} K q against phi~_i equal phi~_i^T K q = (S c)_i
        self.onto_actuators.coefficients_from_moments(&(&self.aux_stiffness * c))
    }

    /// Control coordinates `u` with `K z = sum_j u_j phi_j`.
    pub fn control_coordinates(&self, z: &[f64]) -> DVector<f64> {
        if self.count() == 0 {
            return DVector::zeros(0);
        }
        -self.lambda * self.unit_coordinates(z)
    }

    /// Control coordinates from measurements only.
    pub fn coordinates_from_measurements(&self, s: &DVector<f64>) -> DVector<f64> {
        -self.lambda * (&self.gain * s)
    }

    /// `sum_j u_j phi_j`.
    pub fn forcing_from_coordinates(&self, u: &DVector<f64>) -> Vec<f64> {
        self.onto_actuators.combine(u)
    }

    /// `K z` as a field in `span Phi`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        if self.count() == 0 {
            return vec![0.0; z.len()];
        }
        self.forcing_from_coordinates(&self.control_coordinates(z))
    }

    /// Both sides of `(K^1 p, p)_H = -|P_Vt^{V perp} p|_V^2`, computed
    /// independently at unit gain.
    pub fn monotonicity_certificate(&self, space: &P1Space, p: &[f64]) -> (f64, f64) {
        if self.count() == 0 {
            return (0.0, 0.0);
        }
        let kp = self.forcing_from_coordinates(&(-self.unit_coordinates(p)));
        let lhs = space.inner_h(&kp, p);
        let q = self.onto_auxiliary.apply(p);
        let rhs = -space.stiffness().inner(&q, &q);
        (lhs, rhs)
    }
}

/// Settings for the constrained block inverse iteration behind [`xi_estimate`].
#[derive(Debug, Clone, Copy)]
pub struct XiOptions {
    pub block: usize,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for XiOptions {
    fn default() -> Self {
        XiOptions { block: 6, tol: 1e-11, max_sweeps: 2000 }
    }
}

/// Smallest value of `|Theta|_V^2 / |Theta|_H^2` over nonzero discrete
/// `Theta` vanishing on the boundary with `(Theta, phi_j)_H = 0` for all
/// actuators.
pub fn xi_estimate(family: Option<&ActuatorFamily>, space: &P1Space) -> Result<f64, ControlError> {
    xi_estimate_with(family.map(ActuatorFamily::actuators).unwrap_or(&[]), space, XiOptions::default())
}

/// As [`xi_estimate`], for arbitrary constraint fields.
pub fn xi_estimate_with(constraints: &[Vec<f64>], space: &P1Space, opts: XiOptions) -> Result<f64, ControlError> {
    let interior = space.mesh().interior_nodes();
    let n = interior.len();
    let k = space.stiffness().submatrix(&interior);
    let m = space.mass().submatrix(&interior);
    let factor = k.factorize()?;

    // constraint rows (M phi_j) restricted to interior nodes
    let c_rows: Vec<Vec<f64>> = constraints
        .iter()
        .map(|phi| {
            let mp = space.mass().mul_vec(phi);
            interior.iter().map(|&i| mp[i]).collect()
        })
        .collect();
    let nc = c_rows.len();
    if nc >= n {
        return Err(ControlError::RankDeficient);
    }
    // Z = K^{-1} C^T and the Schur complement C K^{-1} C^T
    let z_cols: Vec<Vec<f64>> = c_rows.iter().map(|c| factor.solve(c)).collect();
    let schur = DMatrix::from_fn(nc, nc, |i, j| dot(&c_rows[i], &z_cols[j]));
    if nc > 0 && !(condition_estimate(&schur) < 1e12) {
        return Err(ControlError::RankDeficient);
    }
    let schur_lu = schur.lu();

    // x -> K^{-1} M x restricted to the constraint set, via the saddle-point elimination
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut y = factor.solve(&m.mul_vec(x));
        if nc > 0 {
            let cy = DVector::from_iterator(nc, c_rows.iter().map(|c| dot(c, &y)));
            let mu = schur_lu.solve(&cy).expect("checked Schur complement");
            for (zc, &muj) in z_cols.iter().zip(mu.iter()) {
                for (yi, zi) in y.iter_mut().zip(zc) {
                    *yi -= muj * zi;
                }
            }
        }
        y
    };

    let b = opts.block.min(n - nc).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut x: Vec<Vec<f64>> = (0..b).map(|_| (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
    let mut previous = f64::INFINITY;
    for _ in 0..opts.max_sweeps {
        let mut y: Vec<Vec<f64>> = x.iter().map(|v| apply(v)).collect();
        // M-orthonormalize (twice for stability)
        for _ in 0..2 {
            for i in 0..y.len() {
                for j in 0..i {
                    let mj = m.mul_vec(&y[j]);
                    let r = dot(&y[i], &mj);
                    let (head, tail) = y.split_at_mut(i);
                    for (a, bb) in tail[0].iter_mut().zip(&head[j]) {
                        *a -= r * bb;
                    }
                }
                let nrm = m.inner(&y[i], &y[i]).sqrt();
                if !(nrm > 0.0) {
                    return Err(ControlError::RankDeficient);
                }
                y[i].iter_mut().for_each(|v| *v /= nrm);
            }
        }
        // Rayleigh-Ritz on the M-orthonormal block
        let ky: Vec<Vec<f64>> = y.iter().map(|v| k.mul_vec(v)).collect();
        let small = DMatrix::from_fn(b, b, |i, j| 0.5 * (dot(&y[i], &ky[j]) + dot(&y[j], &ky[i])));
        let eig = small.symmetric_eigen();
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let lowest = eig.eigenvalues[order[0]];
        x = order
            .iter()
            .map(|&col| {
                let mut v = vec![0.0; n];
                for (r, yr) in y.iter().enumerate() {
                    let w = eig.eigenvectors[(r, col)];
                    for (vi, yi) in v.iter_mut().zip(yr) {
                        *vi += w * yi;
                    }
                }
                v
            })
            .collect();
        if (previous - lowest).abs() <= opts.tol * lowest.abs() {
            return Ok(lowest);
        }
        previous = lowest;
    }
    Err(ControlError::NoConvergence(opts.max_sweeps))
}
