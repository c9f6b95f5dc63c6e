use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use proptest::prelude::*;
use serde::{Deserialize, Serialize};

use slowfast::coeffs::shifted_coefficients;
use slowfast::equilibrium::EquilibriumOptions;
use slowfast::grid::{AngularGrid, SpatialGrid, TensorField, TOL_MEAN};
use slowfast::hminus::{fiber_norm_sq, spatial_weighted_norm_sq, RateValue};
use slowfast::model::ModelSpec;
use slowfast::particles::cells::{min_image_dist2, neighbor_means};
use slowfast::particles::wrap_angle;
use slowfast::problem::Problem;
use slowfast::report::float_token;

const M: usize = 64;

fn problem() -> &'static Problem {
    static P: OnceLock<Problem> = OnceLock::new();
    P.get_or_init(|| {
        let mut spec = ModelSpec::von_mises(1);
        spec.tilt = 0.3;
        Problem::build(&spec, M, SpatialGrid::cube(1, TAU, 16).unwrap(), &EquilibriumOptions::default()).unwrap()
    })
}

/// Random trigonometric polynomial on the circle up to degree 6.
fn trig_coeffs() -> impl Strategy<Value = (f64, Vec<(f64, f64)>)> {
    (-2.0..2.0f64, prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 6))
}

fn eval_trig(c: &(f64, Vec<(f64, f64)>), t: f64) -> f64 {
    c.0 + c.1.iter().enumerate().map(|(k, (a, b))| a * ((k + 1) as f64 * t).cos() + b * ((k + 1) as f64 * t).sin()).sum::<f64>()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Tagged {
    #[serde(with = "float_token")]
    x: f64,
    rate: RateValue,
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadrature_of_constants_and_their_derivative(c in -1e3..1e3f64, half in 8usize..40) {
        let m = 2 * half;
        let grid = AngularGrid::new(m).unwrap();
        let g = vec![c; m];
        prop_assert!((grid.quad(&g) - TAU * c).abs() <= 1e-12 * c.abs().max(1.0) * TAU);
        prop_assert!(grid.d_theta(&g).iter().all(|d| d.abs() <= 1e-12 * c.abs().max(1.0)));
    }

    #[test]
    fn quadrature_is_exact_for_trig_polynomials(c in trig_coeffs()) {
        let grid = AngularGrid::new(16).unwrap();
        let g = grid.sample(|t| eval_trig(&c, t));
        prop_assert!((grid.quad(&g) - TAU * c.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_of_gradient_is_laplacian(cx in trig_coeffs(), cy in trig_coeffs(), l in 0.5..5.0f64) {
        let space = SpatialGrid::cube(2, l, 16).unwrap();
        let k = TAU / l;
        let f = space.sample(|x| eval_trig(&cx, k * x[0]) * eval_trig(&cy, k * x[1]));
        let lap = space.laplacian(&f);
        let dg = space.div(&space.grad(&f));
        let scale = lap.iter().map(|x| x.abs()).fold(1.0, f64::max);
        prop_assert!(sup_diff(&lap, &dg) <= 1e-9 * scale);
    }

    #[test]
    fn fiber_norm_inf_equals_sup_and_scales(c in trig_coeffs(), w in prop::array::uniform4(-1.0..1.0f64), lambda in 0.1..10.0f64, alpha in 0.1..10.0f64) {
        let grid = AngularGrid::new(M).unwrap();
        let g = grid.sample(|t| eval_trig(&c, t) - c.0);
        // smooth enough to be resolved on M nodes
        let h = grid.sample(|t| (0.8 * (w[0] * t.cos() + w[1] * t.sin()) + 0.3 * (w[2] * (2.0 * t).cos() + w[3] * (2.0 * t).sin())).exp());
        let r = fiber_norm_sq(&grid, &g, &h, TOL_MEAN).unwrap();
        let v = r.value.finite().unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!(rel(v, r.sup_value.unwrap()) <= 1e-8 || v < 1e-14);

        let gs: Vec<f64> = g.iter().map(|x| lambda * x).collect();
        let vs = fiber_norm_sq(&grid, &gs, &h, TOL_MEAN).unwrap().value.as_f64();
        prop_assert!(rel(vs, lambda * lambda * v) <= 1e-9 || v < 1e-14);

        let hs: Vec<f64> = h.iter().map(|x| alpha * x).collect();
        let vh = fiber_norm_sq(&grid, &g, &hs, TOL_MEAN).unwrap().value.as_f64();
        prop_assert!(rel(vh, v / alpha) <= 1e-9 || v < 1e-14);
    }

    #[test]
    fn fiber_norm_is_infinite_off_mean_zero(c in trig_coeffs(), offset in 1e-3..1.0f64) {
        let grid = AngularGrid::new(M).unwrap();
        let g = grid.sample(|t| eval_trig(&c, t) - c.0 + offset);
        let r = fiber_norm_sq(&grid, &g, &vec![1.0; M], TOL_MEAN).unwrap();
        prop_assert_eq!(r.value, RateValue::Infinite);
    }

    #[test]
    fn spatial_norm_inf_equals_sup(cx in trig_coeffs(), cy in trig_coeffs(), a in 0.5..3.0f64, b in -0.4..0.4f64) {
        let space = SpatialGrid::cube(2, TAU, 16).unwrap();
        let g = space.sample(|x| eval_trig(&cx, x[0]) * eval_trig(&cy, x[1]) - cx.0 * cy.0);
        let chi = TensorField::constant(2, space.len(), &[a, b, b, 1.0]);
        let r = spatial_weighted_norm_sq(&space, &g, &chi, 1e-9).unwrap();
        let v = r.value.finite().unwrap();
        prop_assert!(v >= -1e-12);
        prop_assert!(rel(v, r.inf_value.unwrap()) <= 1e-8 || v < 1e-12);
        prop_assert!(rel(v, r.sup_value.unwrap()) <= 1e-8 || v < 1e-12);
    }

    #[test]
    fn equilibrium_projection_is_idempotent(c in trig_coeffs()) {
        let ops = &problem().ops;
        let grid = AngularGrid::new(M).unwrap();
        let g = grid.sample(|t| eval_trig(&c, t));
        let p = ops.pi_g(&g);
        prop_assert!(sup_diff(&ops.pi_g(&p), &p) < 1e-12);
        let q = ops.mean_projector(&g);
        prop_assert!(grid.quad(&q).abs() < 1e-12);
    }

    #[test]
    fn coefficients_ignore_constant_shifts_of_psi(shift in -100.0..100.0f64) {
        let p = problem();
        let (d, s) = shifted_coefficients(&p.model, &p.eq, &p.coeffs.psi, &[shift]);
        prop_assert!(rel(d[0][0], p.coeffs.dmat[0][0]) < 1e-9);
        prop_assert!(rel(s[0][0], p.coeffs.sigma[0][0]) < 1e-9);
    }

    #[test]
    fn wrapped_angles_lie_in_half_open_interval(t in -1e4..1e4f64) {
        let w = wrap_angle(t);
        prop_assert!(w > -PI && w <= PI);
        let turns = (t - w) / TAU;
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn cell_list_matches_brute_force(
        pts in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, -1.0..1.0f64), 1..120),
        radius in 0.02..0.6f64,
        two_d in any::<bool>(),
    ) {
        let dim = if two_d { 2 } else { 1 };
        let extents = vec![1.0; dim];
        let positions: Vec<f64> = pts.iter().flat_map(|p| [p.0, p.1].into_iter().take(dim)).collect();
        let feats: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let n = pts.len();
        let (means, counts) = neighbor_means(&positions, dim, &extents, radius, &feats, 1);
        for i in 0..n {
            let xi = &positions[i * dim..(i + 1) * dim];
            let mut s = 0.0;
            let mut c = 0usize;
            for j in 0..n {
                if min_image_dist2(xi, &positions[j * dim..(j + 1) * dim], &extents) <= radius * radius {
                    s += feats[j];
                    c += 1;
                }
            }
            prop_assert_eq!(counts[i], c);
            prop_assert!((means[i] - s / c as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn float_tokens_and_rates_round_trip(x in prop::num::f64::ANY, r in prop::option::of(-1e9..1e9f64)) {
        let rate = r.map(RateValue::Finite).unwrap_or(RateValue::Infinite);
        let v = Tagged { x, rate };
        let s = serde_json::to_string(&v).unwrap();
        let back: Tagged = serde_json::from_str(&s).unwrap();
        prop_assert_eq!(back.rate, v.rate);
        if x.is_nan() {
            prop_assert!(back.x.is_nan());
        } else {
            prop_assert_eq!(back.x, x);
        }
    }
}
