//! Built-in property checks run by `vortctl verify`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actuators::{default_bumps, rectangle_layout, triangle_layout, ActuatorFamily, ActuatorLayout, TrianglePlacement};
use crate::control::{FeedbackOperator, ObliqueProjector};
use crate::fem::{dot, P1Space};
use crate::mesh::{build_mesh, DomainSpec, MeshOptions};
use crate::sim::{example1_initial, example_triangle, FeedbackScheme, Mode, PairIntegrator, Setup, SimConfig};
use crate::vorticity::StreamSolver;

/// Outcome of one check: the worst observed value against its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub tolerance: f64,
    pub value: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:<4} {:<44} worst {:.3e}  tol {:.0e}", if self.passed() { "PASS" } else { "FAIL" }, self.name, self.value, self.tolerance)
    }
}

/// Faults that can be injected to confirm the checks bite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Faults {
    /// Perturb the cross-Gram matrix behind the actuator-side projection.
    pub gram: bool,
}

fn family_on(domain: DomainSpec, layout: ActuatorLayout, h: f64) -> (P1Space, ActuatorFamily) {
    let mesh = build_mesh(&domain, &layout.supports(), MeshOptions { h }).expect("built-in mesh");
    let space = P1Space::new(mesh);
    let family = ActuatorFamily::build(layout, space.mesh(), default_bumps()).expect("built-in family");
    (space, family)
}

fn families() -> Vec<(String, P1Space, ActuatorFamily)> {
    let tri = match example_triangle() {
        DomainSpec::Triangle { vertices } => vertices,
        DomainSpec::Rectangle { .. } => unreachable!(),
    };
    let mut out = Vec::new();
    for m in [1, 2] {
        let (s, f) = family_on(DomainSpec::unit_square(), rectangle_layout(1.0, 1.0, 0.3, m).expect("layout"), 0.1);
        out.push((format!("rectangle M={m}"), s, f));
        let (s, f) = family_on(example_triangle(), triangle_layout(tri, m, TrianglePlacement::default()).expect("layout"), 0.06);
        out.push((format!("triangle M={m}"), s, f));
    }
    out
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn skew_and_energy(rng: &mut ChaCha8Rng) -> (CheckResult, CheckResult) {
    let mesh = build_mesh(&example_triangle(), &[], MeshOptions { h: 0.08 }).expect("built-in mesh").refine();
    let space = P1Space::new(mesh);
    let stream = StreamSolver::new(&space).expect("stream solver");
    let (mut skew, mut energy) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let w = random_field(rng, space.dim());
        let c = stream.convection(&space, &w);
        skew = skew.max(dot(&w, &c).abs() / (space.norm_h(&w) * space.seminorm_v(&w)));
        let psi = stream.stream_function(&space, &w);
        let lhs = stream.velocity(&space, &w).energy(&space);
        let rhs = space.inner_h(&w, &psi);
        energy = energy.max((lhs - rhs).abs() / rhs.abs());
    }
    (
        CheckResult { name: "convection skew-symmetry".into(), tolerance: 1e-12, value: skew },
        CheckResult { name: "velocity energy identity".into(), tolerance: 1e-10, value: energy },
    )
}

fn projector_defect(space: &P1Space, p: &ObliqueProjector, range: &[Vec<f64>], co_range: &[Vec<f64>], z: &[f64]) -> f64 {
    let nz = space.norm_h(z);
    let pz = p.apply(z);
    let idem = space.norm_h(&sub(&p.apply(&pz), &pz));
    let reproduce = range.iter().map(|f| space.norm_h(&sub(&p.apply(f), f)) / space.norm_h(f)).fold(0.0, f64::max);
    let rest = p.apply_complement(z);
    let annihilate = co_range.iter().map(|g| space.inner_h(&rest, g).abs() / space.norm_h(g)).fold(0.0, f64::max);
    let sum: Vec<f64> = pz.iter().zip(&rest).map(|(a, b)| a + b).collect();
    let complement = space.norm_h(&sub(&sum, z));
    (idem / nz).max(reproduce).max(annihilate / nz).max(complement / nz)
}

fn corrupted(space: &P1Space, family: &ActuatorFamily) -> FeedbackOperator {
    let good = ObliqueProjector::new(family.actuators(), family.auxiliaries(), space.mass()).expect("projector");
    let mut gram = good.cross_gram().clone();
    gram *= 1.05;
    if gram.nrows() > 1 {
        gram[(0, 1)] += 0.1 * gram[(0, 0)];
    }
    let bad = ObliqueProjector::from_cross_gram(family.actuators(), family.auxiliaries(), space.mass(), gram).expect("projector");
    let aux = ObliqueProjector::new(family.auxiliaries(), family.actuators(), space.mass()).expect("projector");
    FeedbackOperator::from_projectors(1.0, family.actuators(), bad, aux, space.stiffness(), family.auxiliaries()).expect("feedback")
}

fn observer_equivalence(scheme: FeedbackScheme, lambda: f64) -> CheckResult {
    let mut cfg = SimConfig::example1(0).with_control(Mode::Controlled, 2, lambda);
    cfg.mesh_h = 0.08;
    cfg.dt = 4e-4;
    cfg.scheme = scheme;
    let setup = Setup::for_config(&cfg).expect("built-in setup");
    let w0 = crate::fem::interpolate(setup.space.mesh(), example1_initial);
    let wt0 = vec![0.0; setup.space.dim()];
    let obs_cfg = SimConfig { mode: Mode::Observer, ..cfg.clone() };
    let mut ctrl = PairIntegrator::new(&cfg, &setup, w0.clone(), wt0.clone()).expect("integrator");
    let mut obs = PairIntegrator::new(&obs_cfg, &setup, w0, wt0).expect("integrator");
    let mut worst = 0.0f64;
    for _ in 0..200 {
        ctrl.advance();
        obs.advance();
        let d = setup.space.norm_h(&sub(ctrl.w(), obs.w()));
        worst = if d.is_finite() { worst.max(d) } else { f64::INFINITY };
    }
    CheckResult { name: format!("observer equivalence ({scheme})"), tolerance: 1e-10, value: worst }
}

/// Runs every check; the order of the result list is fixed.
pub fn run_checks(faults: Faults) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut results = Vec::new();
    let (skew, energy) = skew_and_energy(&mut rng);
    results.push(skew);
    results.push(energy);

    let fams = families();
    let mut proj = 0.0f64;
    let (mut mono, mut sufficiency) = (0.0f64, 0.0f64);
    for (_, space, family) in &fams {
        let to_act = ObliqueProjector::new(family.actuators(), family.auxiliaries(), space.mass()).expect("projector");
        let to_aux = ObliqueProjector::new(family.auxiliaries(), family.actuators(), space.mass()).expect("projector");
        let feedback = if faults.gram { corrupted(space, family) } else { FeedbackOperator::new(1.0, family, space).expect("feedback") };
        for _ in 0..5 {
            let z = random_field(&mut rng, space.dim());
            proj = proj.max(projector_defect(space, &to_act, family.actuators(), family.auxiliaries(), &z));
            proj = proj.max(projector_defect(space, &to_aux, family.auxiliaries(), family.actuators(), &z));

            let coeffs = DVector::from_fn(family.count(), |_, _| rng.gen_range(-1.0..1.0));
            let p = to_act.combine(&coeffs);
            let (lhs, rhs) = feedback.monotonicity_certificate(space, &p);
            mono = mono.max((lhs - rhs).abs() / rhs.abs());

            // add a component orthogonal to every actuator
            let mut perp = random_field(&mut rng, space.dim());
            for _ in 0..2 {
                for phi in family.actuators() {
                    let r = space.inner_h(phi, &perp) / space.inner_h(phi, phi);
                    perp.iter_mut().zip(phi).for_each(|(a, b)| *a -= r * b);
                }
            }
            let base = feedback.apply(&z);
            let shifted = feedback.apply(&z.iter().zip(&perp).map(|(a, b)| a + b).collect::<Vec<_>>());
            sufficiency = sufficiency.max(space.norm_h(&sub(&base, &shifted)) / space.norm_h(&base));
        }
    }
    results.push(CheckResult { name: "oblique projector identities".into(), tolerance: 1e-10, value: proj });
    results.push(CheckResult { name: "feedback monotonicity equality".into(), tolerance: 1e-9, value: mono });
    results.push(CheckResult { name: "feedback measurement sufficiency".into(), tolerance: 1e-10, value: sufficiency });
    results.push(observer_equivalence(FeedbackScheme::Implicit, 10.0));
    // explicit feedback is only stable for small gains at this step size
    results.push(observer_equivalence(FeedbackScheme::Explicit, 0.01));
    results
}
