use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use slowfast::equilibrium::EquilibriumOptions;
use slowfast::grid::SpatialGrid;
use slowfast::model::{ModelSpec, PairPotential, TrigSeries};
use slowfast::particles::*;
use slowfast::problem::Problem;
use std::f64::consts::PI;

fn problem(spec: &ModelSpec) -> Problem {
    let space = SpatialGrid::cube(spec.dim(), 1.0, 8).unwrap();
    Problem::build(spec, 64, space, &EquilibriumOptions::default()).unwrap()
}

#[test]
fn zero_epsilon_freezes_positions() {
    let mut spec = ModelSpec::active_2d(0.5);
    spec.epsilon = 0.0;
    let mut sys = ParticleSystem::new(&spec, &[1.0, 1.0], 500, 3, &InitialAngles::Uniform).unwrap();
    let q0 = sys.state.positions.clone();
    let a0 = sys.state.angles.clone();
    sys.run(1.0, 0.01).unwrap();
    assert_eq!(sys.state.positions, q0);
    assert_ne!(sys.state.angles, a0);
    assert!(sys.state.angles.iter().all(|t| *t > -PI && *t <= PI));
}

#[test]
fn two_particle_step_matches_hand_computation() {
    let mut spec = ModelSpec::free_abp(1);
    spec.potential = TrigSeries::cos_mode(1, 1.0);
    spec.gamma = TrigSeries { cos: vec![1.0, 0.3], sin: vec![0.0, 0.0] };
    spec.pair = PairPotential::cos_difference(1, 0.5);
    spec.coupling = 1.0;
    spec.epsilon = 0.2;
    let seed = 11;
    let mut sys = ParticleSystem::new(&spec, &[2.0], 2, seed, &InitialAngles::Uniform).unwrap();
    sys.state.angles = vec![0.3, -1.2];
    let q0 = sys.state.positions.clone();
    let dt = 0.01;
    sys.step(dt);

    let th = [0.3f64, -1.2f64];
    let f = |a: f64, b: f64| -0.5 * (a - b).sin();
    for i in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let _: f64 = rng.random();
        let _: f64 = rng.random();
        let xi: f64 = rng.sample(StandardNormal);
        let t = th[i];
        let g = 1.0 + 0.3 * t.cos();
        let dg = -0.3 * t.sin();
        let du = -t.sin();
        let mean_f = 0.5 * (f(t, th[0]) + f(t, th[1]));
        let want = t + dt * (-g * du + dg - g * mean_f) + (2.0 * g * dt).sqrt() * xi;
        assert!((sys.state.angles[i] - want).abs() < 1e-14, "particle {i}");
        let wq = (q0[i] + 0.2 * t.cos() * dt).rem_euclid(2.0);
        assert!((sys.state.positions[i] - wq).abs() < 1e-14);
    }
}

#[test]
fn serial_and_parallel_runs_are_bit_identical() {
    let mut spec = ModelSpec::active_2d(0.8);
    spec.radius = 0.15;
    spec.epsilon = 0.3;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut sys = ParticleSystem::new(&spec, &[1.0, 1.0], 2000, 5, &InitialAngles::Uniform).unwrap();
            sys.run(0.5, 0.01).unwrap();
            (sys.state.angles, sys.state.positions)
        })
    };
    let (a1, p1) = run(1);
    let (a4, p4) = run(4);
    assert!(a1.iter().zip(&a4).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(p1.iter().zip(&p4).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn step_size_is_bounded() {
    let spec = ModelSpec::von_mises(1);
    let mut sys = ParticleSystem::new(&spec, &[1.0], 10, 1, &InitialAngles::Uniform).unwrap();
    assert!((sys.dt_max() - 0.1).abs() < 1e-6);
    assert!(matches!(sys.run(1.0, 0.5), Err(slowfast::Error::StepTooLarge { .. })));
    let mut spec = ModelSpec::free_abp(1);
    spec.radius = 0.05;
    spec.epsilon = 0.5;
    let sys = ParticleSystem::new(&spec, &[1.0], 10, 1, &InitialAngles::Uniform).unwrap();
    assert!((sys.dt_max() - 0.01).abs() < 1e-9);
}

#[test]
fn neighbor_counts_include_self() {
    let mut spec = ModelSpec::active_2d(0.5);
    spec.radius = 1e-6;
    let sys = ParticleSystem::new(&spec, &[1.0, 1.0], 50, 2, &InitialAngles::Uniform).unwrap();
    let (force, counts) = sys.interaction_terms();
    assert!(counts.iter().all(|&c| c == 1));
    // the self term sin(0) vanishes
    assert!(force.iter().all(|f| f.abs() < 1e-15));
}

#[test]
fn brownian_angles_become_uniform() {
    let r = uniform_angle_ks(10_000, 10.0, 0.01, 21).unwrap();
    assert!(r.p_value > 0.01, "{r:?}");
}

#[test]
fn two_particle_law_is_gibbs() {
    let r = two_particle_gibbs_ks(4000, 8.0, 0.005, 99).unwrap();
    assert!(r.p_value > 0.01, "{r:?}");
}

#[test]
fn free_abp_transport() {
    let mut spec = ModelSpec::free_abp(2);
    spec.epsilon = 0.1;
    let p = problem(&spec);
    let rep = estimate_transport(&p, &TransportOptions::default()).unwrap();
    assert!(rep.diffusivity_ok, "{:?}", rep.effective_diffusivity);
    assert!(rep.drift_ok, "{:?}", rep.effective_drift);
    for a in 0..2 {
        assert!((rep.effective_diffusivity[a][a] - 0.5).abs() < 0.05);
    }
}

#[test]
fn constant_velocity_has_exact_drift() {
    let mut spec = ModelSpec::free_abp(1);
    spec.velocity = vec![TrigSeries::constant(0.7)];
    spec.epsilon = 0.1;
    let p = problem(&spec);
    let opts = TransportOptions { n: 500, t_final: 10.0, fit_start: 1.0, bootstrap: 50, ..Default::default() };
    let rep = estimate_transport(&p, &opts).unwrap();
    assert!((rep.effective_drift[0] - 0.7).abs() < 1e-12);
    assert!(rep.effective_diffusivity[0][0].abs() < 1e-12);
    assert!(rep.drift_ok && rep.diffusivity_ok, "{rep:?}");
}

#[test]
fn free_abp_fluctuations_are_flat() {
    let mut spec = ModelSpec::free_abp(2);
    spec.epsilon = 0.5;
    let p = problem(&spec);
    let rep = fluctuation_spectrum(&p, &FluctuationOptions::default()).unwrap();
    for r in &rep.runs {
        for m in &r.modes {
            assert!(m.z_score.abs() <= 3.0, "N={} {:?}", r.n, m);
        }
    }
    assert!(rep.scaling_ok, "{:?}", rep.scaling);
}
