//! Acceptance suite. Runs every criterion in order, prints one line per
//! criterion and exits with a failure status if any of them fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vortctl::actuators::ActuatorFamily;
use vortctl::control::{xi_estimate, FeedbackOperator, ObliqueProjector};
use vortctl::fem::{dot, interpolate, P1Space};
use vortctl::mesh::DomainSpec;
use vortctl::sim::{
    estimate_decay, example1_initial, example_triangle, ActuatorSpec, DecayFit, Example2Forcing, Mode, PairIntegrator,
    SimConfig, SimRun, Setup,
};
use vortctl::vorticity::StreamSolver;

struct Verdict {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
    seconds: f64,
}

fn criterion(id: u32, name: &'static str, body: impl FnOnce() -> (bool, String)) -> Verdict {
    let start = Instant::now();
    let (passed, detail) = body();
    let v = Verdict { id, name, passed, detail, seconds: start.elapsed().as_secs_f64() };
    println!("{} [{:>2}] {:<34} {} ({:.1} s)", if v.passed { "PASS" } else { "FAIL" }, v.id, v.name, v.detail, v.seconds);
    v
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Example 1 mesh `R_1`: base size 0.05, one uniform refinement.
fn r1_setup(m: usize) -> Setup {
    Setup::build(&example_triangle(), 0.05, 1, &ActuatorSpec { m, ..ActuatorSpec::default() }).expect("R1 setup")
}

/// Rectangle and triangle families with M = 1, 2.
fn layouts() -> Vec<(String, Setup)> {
    let mut out = Vec::new();
    for m in [1, 2] {
        let spec = ActuatorSpec { m, ..ActuatorSpec::default() };
        out.push((format!("rectangle M={m}"), Setup::build(&DomainSpec::unit_square(), 0.1, 1, &spec).expect("rectangle setup")));
        out.push((format!("triangle M={m}"), Setup::build(&example_triangle(), 0.05, 0, &spec).expect("triangle setup")));
    }
    out
}

/// Dense cross-Gram `[(phi_i, phi~_j)_H]` assembled directly from the mass matrix.
fn dense_cross_gram(space: &P1Space, family: &ActuatorFamily) -> DMatrix<f64> {
    let n = family.count();
    DMatrix::from_fn(n, n, |i, j| space.inner_h(&family.actuators()[i], &family.auxiliaries()[j]))
}

fn c1_skew(rng: &mut ChaCha8Rng) -> (bool, String) {
    let setup = r1_setup(0);
    let space = &setup.space;
    let stream = StreamSolver::new(space).expect("stream solver");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let w = random_field(rng, space.dim());
        let c = stream.convection(space, &w);
        worst = worst.max(dot(&w, &c).abs() / (space.norm_h(&w) * space.seminorm_v(&w)));
    }
    (worst <= 1e-12, format!("max |w.N(w)|/(|w|_H|w|_V) = {worst:.2e} (tol 1e-12, 100 fields, n = {})", space.dim()))
}

fn c2_projectors(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst = 0.0f64;
    for (_, setup) in layouts() {
        let space = &setup.space;
        let family = setup.family.as_ref().unwrap();
        let pairs = [(family.actuators(), family.auxiliaries()), (family.auxiliaries(), family.actuators())];
        for (range, co_range) in pairs {
            let p = ObliqueProjector::new(range, co_range, space.mass()).expect("projector");
            for _ in 0..10 {
                let z = random_field(rng, space.dim());
                let nz = space.norm_h(&z);
                let pz = p.apply(&z);
                let rest = p.apply_complement(&z);
                worst = worst.max(space.norm_h(&sub(&p.apply(&pz), &pz)) / nz);
                for f in range {
                    worst = worst.max(space.norm_h(&sub(&p.apply(f), f)) / space.norm_h(f));
                }
                for g in co_range {
                    worst = worst.max(space.inner_h(&rest, g).abs() / (space.norm_h(g) * nz));
                }
                let sum: Vec<f64> = pz.iter().zip(&rest).map(|(a, b)| a + b).collect();
                worst = worst.max(space.norm_h(&sub(&sum, &z)) / nz);
            }
        }
    }
    (worst <= 1e-10, format!("worst relative defect {worst:.2e} (tol 1e-10, rectangle/triangle, M = 1, 2)"))
}

fn c3_monotonicity(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (_, setup) in layouts() {
        let space = &setup.space;
        let family = setup.family.as_ref().unwrap();
        let k = FeedbackOperator::new(1.0, family, space).expect("feedback");
        let gram = dense_cross_gram(space, family);
        for _ in 0..50 {
            let coeffs: Vec<f64> = (0..family.count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut p = vec![0.0; space.dim()];
            for (c, phi) in coeffs.iter().zip(family.actuators()) {
                p.iter_mut().zip(phi).for_each(|(a, b)| *a += c * b);
            }
            // q in span phi~ with (p - q, phi_i)_H = 0
            let s = DVector::from_iterator(family.count(), family.actuators().iter().map(|phi| space.inner_h(phi, &p)));
            let a = gram.clone().lu().solve(&s).expect("cross-Gram solve");
            let mut q = vec![0.0; space.dim()];
            for (c, psi) in a.iter().zip(family.auxiliaries()) {
                q.iter_mut().zip(psi).for_each(|(x, y)| *x += c * y);
            }
            let rhs = -space.stiffness().inner(&q, &q);
            let lhs = space.inner_h(&k.apply(&p), &p);
            worst = worst.max((lhs - rhs).abs() / rhs.abs());
            checked += 1;
        }
    }
    (worst <= 1e-9, format!("worst relative gap {worst:.2e} (tol 1e-9, {checked} samples)"))
}

fn c4_xi() -> (bool, String) {
    let mut xi = Vec::new();
    for m in 0..=2 {
        let setup = Setup::build(&DomainSpec::unit_square(), 0.1, 2, &ActuatorSpec { m, ..ActuatorSpec::default() }).expect("square setup");
        xi.push(xi_estimate(setup.family.as_ref(), &setup.space).expect("xi"));
    }
    let target = 2.0 * std::f64::consts::PI.powi(2);
    let rel = (xi[0] - target).abs() / target;
    let ok = xi[0] < xi[1] && xi[1] < xi[2] && rel <= 0.05;
    (ok, format!("xi(0..2) = {:.3}, {:.3}, {:.3}; |xi(0) - 2 pi^2|/2 pi^2 = {rel:.2e} (tol 5e-2)", xi[0], xi[1], xi[2]))
}

fn fit(run: &SimRun) -> DecayFit {
    run.decay().expect("decay fit")
}

fn example1_run(m: usize, lambda: f64, t_end: f64, setup: &Setup) -> SimRun {
    let mut cfg = SimConfig::example1(1);
    cfg.dt = 4e-4;
    cfg.t_end = t_end;
    if m > 0 {
        cfg = cfg.with_control(Mode::Controlled, m, lambda);
    }
    vortctl::sim::run_pair_on(&cfg, setup).expect("example 1 run")
}

fn example2_controlled(m: usize) -> DecayFit {
    let mut cfg = SimConfig::example2(1, Example2Forcing::Scaled).with_control(Mode::Controlled, m, 1.0);
    cfg.dt = 4e-4;
    cfg.t_end = 30.0;
    fit(&vortctl::sim::run_pair(&cfg).expect("example 2 run"))
}

fn c8_manufactured(forcing: Example2Forcing) -> Vec<f64> {
    (0..=2)
        .map(|level| {
            let mut cfg = SimConfig::example2(level, forcing);
            cfg.t_end = 3.0;
            vortctl::sim::run_pair(&cfg).expect("example 2 run").max_target_error().expect("exact error")
        })
        .collect()
}

fn c9_observer() -> (bool, String) {
    let setup = r1_setup(2);
    let mut cfg = SimConfig::example1(1).with_control(Mode::Controlled, 2, 1.0);
    cfg.dt = 4e-4;
    cfg.t_end = 30.0;
    let obs_cfg = SimConfig { mode: Mode::Observer, ..cfg.clone() };
    let w0 = interpolate(setup.space.mesh(), example1_initial);
    let wt0 = vec![0.0; setup.space.dim()];
    let mut ctrl = PairIntegrator::new(&cfg, &setup, w0.clone(), wt0.clone()).expect("integrator");
    let mut obs = PairIntegrator::new(&obs_cfg, &setup, w0, wt0).expect("integrator");
    let space = &setup.space;
    let mut series = vec![(0.0, space.norm_h(&sub(obs.w(), obs.wt())))];
    let mut gap = 0.0f64;
    for _ in 0..cfg.steps() {
        ctrl.advance();
        obs.advance();
        let d = space.norm_h(&sub(ctrl.w(), obs.w()));
        gap = if d.is_finite() { gap.max(d) } else { f64::INFINITY };
        series.push((obs.t(), space.norm_h(&sub(obs.w(), obs.wt()))));
    }
    let mu = estimate_decay(&series).map(|f| f.rate).unwrap_or(f64::NAN);
    (gap <= 1e-10 && mu >= 1.5, format!("max step gap {gap:.2e} (tol 1e-10); observer mu = {mu:.4} (>= 1.5)"))
}

fn c10_energy(rng: &mut ChaCha8Rng) -> (bool, String) {
    let setup = r1_setup(0);
    let space = &setup.space;
    let stream = StreamSolver::new(space).expect("stream solver");
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let w = random_field(rng, space.dim());
        let psi = stream.stream_function(space, &w);
        let lhs = stream.velocity(space, &w).energy(space);
        let rhs = space.inner_h(&w, &psi);
        worst = worst.max((lhs - rhs).abs() / rhs.abs());
    }
    (worst <= 1e-10, format!("worst relative gap {worst:.2e} (tol 1e-10, 50 fields)"))
}

fn main() -> ExitCode {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let mut verdicts = Vec::new();

    verdicts.push(criterion(1, "convection skew-symmetry", || c1_skew(&mut rng)));
    verdicts.push(criterion(2, "oblique projector suite", || c2_projectors(&mut rng)));
    verdicts.push(criterion(3, "feedback monotonicity equality", || c3_monotonicity(&mut rng)));
    verdicts.push(criterion(4, "Poincare-like constant growth", c4_xi));

    let free_setup = r1_setup(0);
    let m1_setup = r1_setup(1);
    let m2_setup = r1_setup(2);
    let mut free_rate = f64::NAN;
    verdicts.push(criterion(5, "free decay rate, example 1", || {
        let f = fit(&example1_run(0, 0.0, 24.0, &free_setup));
        free_rate = f.rate;
        (f.rate >= 0.4 && f.rate <= 0.9, format!("mu = {:.4} in [0.4, 0.9], window [{:.2}, {:.2}]", f.rate, f.t_start, f.t_end))
    }));

    let mut m2_lambda1 = None;
    verdicts.push(criterion(6, "controlled decay, example 1, M=2", || {
        let fits: Vec<(f64, DecayFit)> = [1.0, 10.0, 100.0].iter().map(|&l| (l, fit(&example1_run(2, l, 30.0, &m2_setup)))).collect();
        m2_lambda1 = Some(fits[0].1);
        let (best_lambda, best) = fits.iter().copied().max_by(|a, b| a.1.rate.total_cmp(&b.1.rate)).unwrap();
        let floor_ok = best.floor_reached && (-40.0..=-32.0).contains(&best.log_min_ratio);
        let rates: Vec<String> = fits.iter().map(|(l, f)| format!("{l}:{:.4}", f.rate)).collect();
        (
            best.rate >= 1.5 && best.rate > free_rate && floor_ok,
            format!(
                "best mu = {:.4} at lambda {best_lambda} (>= 1.5, > free {free_rate:.4}); ln floor = {:.2} in [-40, -32]; rates {}",
                best.rate,
                best.log_min_ratio,
                rates.join(" ")
            ),
        )
    }));

    verdicts.push(criterion(7, "rate increases with M", || {
        let e1_m1 = fit(&example1_run(1, 1.0, 30.0, &m1_setup)).rate;
        let e1_m2 = m2_lambda1.map(|f| f.rate).unwrap_or_else(|| fit(&example1_run(2, 1.0, 30.0, &m2_setup)).rate);
        let e2_m1 = example2_controlled(1).rate;
        let e2_m2 = example2_controlled(2).rate;
        (
            e1_m2 > e1_m1 && e2_m2 > e2_m1,
            format!("lambda 1: example 1 mu {e1_m1:.4} -> {e1_m2:.4}; example 2 mu {e2_m1:.4} -> {e2_m2:.4}"),
        )
    }));

    verdicts.push(criterion(8, "manufactured solution, example 2", || {
        let e = c8_manufactured(Example2Forcing::Consistent);
        let scaled = c8_manufactured(Example2Forcing::Scaled);
        let ok = e[0] > e[1] && e[1] > e[2];
        (
            ok,
            format!(
                "max error R0..R2 = {:.3e}, {:.3e}, {:.3e} (strictly decreasing); scaled forcing: {:.3e}, {:.3e}, {:.3e}",
                e[0], e[1], e[2], scaled[0], scaled[1], scaled[2]
            ),
        )
    }));

    verdicts.push(criterion(9, "observer equivalence", c9_observer));
    verdicts.push(criterion(10, "velocity energy identity", || c10_energy(&mut rng)));

    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    println!("{} of {} criteria passed", verdicts.len() - failed.len(), verdicts.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
