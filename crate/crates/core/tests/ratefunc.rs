use slowfast::equilibrium::EquilibriumOptions;
use slowfast::grid::{PhaseField, SpatialGrid};
use slowfast::hminus::RateValue;
use slowfast::model::ModelSpec;
use slowfast::problem::Problem;
use slowfast::ratefunc::*;
use std::f64::consts::PI;

fn abp1(m: usize, nq: usize) -> Problem {
    let space = SpatialGrid::new(&[2.0 * PI], &[nq]).unwrap();
    Problem::build(&ModelSpec::free_abp(1), m, space, &EquilibriumOptions::default()).unwrap()
}

fn le_path(p: &Problem, times: &[f64], amp: f64, decay: f64) -> DensityPath {
    let rho = cosine_rho_path(&p.space, times, amp, 1, decay);
    DensityPath::local_equilibrium(times.to_vec(), rho, p.eq.g.clone())
}

#[test]
fn static_constant_density_has_zero_defect() {
    let p = abp1(32, 16);
    let times = uniform_times(1.0, 5);
    let path = le_path(&p, &times, 0.0, 0.0);
    for s in 0..times.len() {
        let a = a_eps(&path, &p, 0.1, s).unwrap();
        assert!(a.sup() < 1e-12);
    }
    assert!(rate_eps(&path, &p, 0.1).unwrap().value.as_f64() < 1e-20);
    assert!(rate_limit(&path, &p).unwrap().value.as_f64() < 1e-20);
}

#[test]
fn angular_mass_of_defect_is_eps_dt_rho() {
    let p = abp1(32, 16);
    let times = uniform_times(1.0, 11);
    let path = le_path(&p, &times, 0.5, 0.7);
    let eps = 0.2;
    let s = 4;
    let a = a_eps(&path, &p, eps, s).unwrap();
    let dt = path.rho_dt(s).unwrap();
    for q in 0..a.nq {
        let mass = p.grid().quad(a.fiber(q));
        assert!((mass - eps * dt[q]).abs() < 1e-10, "{mass} vs {}", eps * dt[q]);
    }
}

#[test]
fn diffusion_solution_is_typical() {
    let p = abp1(32, 32);
    let times = uniform_times(1.0, 41);
    let decay = diffusion_decay(&p, 1);
    let path = le_path(&p, &times, 0.5, decay);
    let lim = rate_limit(&path, &p).unwrap();
    assert!(lim.value.as_f64() < 1e-8, "{}", lim.value);
    let rec = build_recovery(&path, &p, 0.1).unwrap();
    let a_sup = rec.a.iter().flatten().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(a_sup < 1e-4, "{a_sup}");
    let lb = liminf_bound(&rec.path, Some(&path), &p, 0.1).unwrap();
    assert!(lb.limit_value.unwrap().abs() < 1e-8);
}

#[test]
fn general_path_has_infinite_limit() {
    let p = abp1(32, 16);
    let times = uniform_times(1.0, 3);
    let slices: Vec<PhaseField> = (0..3).map(|_| PhaseField::product(&[1.0; 16], &p.eq.g)).collect();
    let path = DensityPath::general(times, slices);
    assert_eq!(rate_limit(&path, &p).unwrap().value, RateValue::Infinite);
}

#[test]
fn rate_limit_is_quadratic_in_perturbation() {
    let p = abp1(32, 32);
    let times = uniform_times(1.0, 41);
    let decay = diffusion_decay(&p, 1);
    let base = cosine_rho_path(&p.space, &times, 0.5, 1, decay);
    let value = |delta: f64| {
        let rho: Vec<Vec<f64>> = base
            .iter()
            .zip(&times)
            .map(|(r, t)| {
                r.iter()
                    .enumerate()
                    .map(|(i, x)| x * (1.0 + delta * t * (2.0 * p.space.coords(i)[0]).sin()))
                    .collect()
            })
            .collect();
        rate_limit(&DensityPath::local_equilibrium(times.clone(), rho, p.eq.g.clone()), &p).unwrap().value.as_f64()
    };
    let (a, b) = (value(1e-2), value(5e-3));
    assert!(a > 0.0);
    assert!((a / b - 4.0).abs() < 4e-3 * 4.0, "ratio {}", a / b);
}

#[test]
fn non_equilibrium_profile_grows_like_inverse_eps_squared() {
    let p = abp1(32, 8);
    let times = uniform_times(1.0, 3);
    let g: Vec<f64> = p.grid().nodes().iter().map(|t| (1.0 + 0.3 * t.cos()) / (2.0 * PI)).collect();
    let slices: Vec<PhaseField> = (0..3).map(|_| PhaseField::product(&[1.0; 8], &g)).collect();
    let path = DensityPath::general(times, slices);
    let eps = [0.2, 0.1, 0.05];
    let vals: Vec<f64> = eps.iter().map(|&e| rate_eps(&path, &p, e).unwrap().value.as_f64()).collect();
    let order = slowfast::stats::fit_order(&eps, &vals);
    assert!((order + 2.0).abs() < 0.1, "order {order}");
    let bounds: Vec<f64> = eps.iter().map(|&e| liminf_bound(&path, None, &p, e).unwrap().value).collect();
    assert!(bounds.windows(2).all(|w| w[1] > 3.0 * w[0]));
    for (b, v) in bounds.iter().zip(&vals) {
        assert!(*b <= v * (1.0 + 1e-9));
    }
}

#[test]
fn recovery_corrector_has_zero_angular_mass() {
    let p = abp1(32, 16);
    let times = uniform_times(0.5, 11);
    let path = le_path(&p, &times, 0.5, 2.0);
    let rec = build_recovery(&path, &p, 0.1).unwrap();
    for c in &rec.corrector {
        for q in 0..c.nq {
            assert!(p.grid().quad(c.fiber(q)).abs() < 1e-12);
        }
    }
    assert!(matches!(build_recovery(&path, &p, 50.0), Err(slowfast::Error::EpsilonTooLarge { .. })));
}

#[test]
fn static_profile_recovery_is_exact_for_free_abp() {
    // with ω = ξ the corrector cancels and ρG already attains the limit value
    let p = abp1(32, 32);
    let times = uniform_times(1.0, 11);
    let path = le_path(&p, &times, 0.5, 0.0);
    let lim = rate_limit(&path, &p).unwrap().value.as_f64();
    let rec = build_recovery(&path, &p, 0.2).unwrap();
    assert!(rec.corrector.iter().all(|c| c.sup() < 1e-10));
    assert!((rate_eps(&rec.path, &p, 0.2).unwrap().value.as_f64() - lim).abs() < 1e-10);
}

#[test]
fn liminf_limit_matches_rate_limit() {
    let p = abp1(32, 32);
    let times = uniform_times(1.0, 21);
    let path = le_path(&p, &times, 0.5, 0.0);
    let lim = rate_limit(&path, &p).unwrap().value.as_f64();
    let rec = build_recovery(&path, &p, 0.05).unwrap();
    let lb = liminf_bound(&rec.path, Some(&path), &p, 0.05).unwrap();
    assert!((lb.limit_value.unwrap() - lim).abs() < 1e-6 * lim);
}

#[test]
fn gamma_sweep_free_abp() {
    let p = abp1(64, 32);
    let times = uniform_times(1.0, 41);
    let path = le_path(&p, &times, 0.5, 2.0);
    let rep = gamma_sweep(&path, &p, &[0.2, 0.1, 0.05, 0.025]).unwrap();
    assert!(rep.monotone && rep.sandwich);
    let at_01 = rep.rows.iter().find(|r| r.epsilon == 0.1).unwrap();
    assert!(at_01.gap < 0.15 * at_01.rate_limit.as_f64());
    assert!(rep.order >= 0.9, "order {}", rep.order);
}
