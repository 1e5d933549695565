use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vortctl::control::{FeedbackOperator, ObliqueProjector};
use vortctl::fem::{interpolate, P1Space};
use vortctl::mesh::{build_mesh, DomainSpec, MeshOptions};
use vortctl::sim::{
    estimate_decay, run_pair_from, ActuatorSpec, CustomData, Mode, PairIntegrator, Preset, Setup, SimConfig,
};

fn custom_zero() -> SimConfig {
    SimConfig { preset: Preset::Custom(CustomData { f: 0.0, g: 0.0, w0: 0.0, wt0: 0.0 }), mesh_h: 0.1, ..SimConfig::example1(0) }
}

fn field(seed: u64, space: &P1Space, interior_only: bool) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = space.mesh();
    let mut w: Vec<f64> = (0..space.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    if interior_only {
        for b in mesh.boundary_nodes() {
            w[b] = 0.0;
        }
    }
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn refinement_quadruples_and_keeps_area(l1 in 0.5f64..2.0, l2 in 0.5f64..2.0) {
        let mesh = build_mesh(&DomainSpec::Rectangle { l1, l2 }, &[], MeshOptions { h: 0.25 }).unwrap();
        let fine = mesh.refine();
        prop_assert_eq!(fine.num_triangles(), 4 * mesh.num_triangles());
        let ones = vec![1.0; fine.num_nodes()];
        let area = P1Space::new(fine).mass().inner(&ones, &ones);
        prop_assert!((area - l1 * l2).abs() < 1e-12 * l1 * l2);
    }

    #[test]
    fn projector_is_idempotent_with_the_right_kernel(seed in any::<u64>(), m in 1usize..=2) {
        let setup = Setup::build(&DomainSpec::unit_square(), 0.1, 0, &ActuatorSpec { m, ..ActuatorSpec::default() }).unwrap();
        let space = &setup.space;
        let family = setup.family.as_ref().unwrap();
        let p = ObliqueProjector::new(family.actuators(), family.auxiliaries(), space.mass()).unwrap();
        let z = field(seed, space, false);
        let pz = p.apply(&z);
        let ppz = p.apply(&pz);
        let diff: Vec<f64> = ppz.iter().zip(&pz).map(|(a, b)| a - b).collect();
        prop_assert!(space.norm_h(&diff) <= 1e-10 * space.norm_h(&z));
        let rest = p.apply_complement(&z);
        for g in family.auxiliaries() {
            prop_assert!(space.inner_h(&rest, g).abs() <= 1e-10 * space.norm_h(g) * space.norm_h(&z));
        }
    }

    #[test]
    fn feedback_is_dissipative_on_its_range(seed in any::<u64>(), lambda in 0.1f64..100.0) {
        let setup = Setup::build(&DomainSpec::unit_square(), 0.1, 0, &ActuatorSpec { m: 2, ..ActuatorSpec::default() }).unwrap();
        let space = &setup.space;
        let family = setup.family.as_ref().unwrap();
        let k = FeedbackOperator::new(lambda, family, space).unwrap();
        let z = field(seed, space, false);
        let pz = k.onto_actuators().apply(&z);
        prop_assert!(space.inner_h(&k.apply(&pz), &pz) <= 0.0);
    }

    #[test]
    fn decay_fit_recovers_exponential_rate(rate in 0.05f64..5.0, c in 0.1f64..10.0) {
        let series: Vec<(f64, f64)> = (0..200).map(|i| { let t = i as f64 * 0.05; (t, c * (-rate * t).exp()) }).collect();
        let fit = estimate_decay(&series).unwrap();
        prop_assert!((fit.rate - rate).abs() < 1e-9 * rate.max(1.0));
    }

    #[test]
    fn unforced_flow_never_gains_energy(seed in any::<u64>()) {
        let cfg = SimConfig { t_end: 0.2, ..custom_zero() };
        let setup = Setup::for_config(&cfg).unwrap();
        let space = &setup.space;
        let w0: Vec<f64> = field(seed, space, true).iter().map(|v| 20.0 * v).collect();
        let mut it = PairIntegrator::new(&cfg, &setup, w0.clone(), w0).unwrap();
        let mut prev = space.norm_h(it.w());
        for _ in 0..cfg.steps() {
            it.advance();
            let now = space.norm_h(it.w());
            prop_assert!(now <= prev * (1.0 + 1e-12));
            prev = now;
        }
    }
}

#[test]
fn identical_initial_data_never_separate() {
    let cfg = SimConfig { t_end: 0.4, mode: Mode::Free, ..SimConfig::example1(0) };
    let setup = Setup::for_config(&cfg).unwrap();
    let w0 = interpolate(setup.space.mesh(), vortctl::sim::example1_initial);
    let run = run_pair_from(&cfg, &setup, w0.clone(), w0).unwrap();
    assert!(run.samples.iter().all(|s| s.norm_z <= 1e-12));
}
