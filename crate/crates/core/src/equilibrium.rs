//! Stationary angular density G of the fast dynamics.
//!
//! G solves the zero-flux equation [∂_θU + F(G)]G + ∂_θG = 0 with ∫G = 1. It is computed as the
//! fixed point of T(G) = e^{-H}/Z, ∂_θH = ∂_θU + F(G), with damped iteration.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{sup_norm, TOL_MEAN};
use crate::model::SampledModel;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumOptions {
    pub damping: f64,
    pub tol_iter: f64,
    pub tol_eq: f64,
    pub max_iter: usize,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions { damping: 0.5, tol_iter: 1e-12, tol_eq: 1e-9, max_iter: 10_000 }
    }
}

/// Explicit density bounds (1/4π) e^{-2π K} ≤ G ≤ (1/π) e^{2π K}, K = ‖∂U‖ + ‖F‖ + ‖∂ log Γ‖.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityBounds {
    pub lower: f64,
    pub upper: f64,
    pub min_g: f64,
    pub max_g: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquilibriumState {
    pub g: Vec<f64>,
    /// G = e^{-H}.
    pub h: Vec<f64>,
    /// Zero-flux residual sup|[∂U + F(G)]G + ∂G| (stationarity residual for tilted models).
    pub residual: f64,
    /// sup|T(G) - G| at the returned state.
    pub fixed_point_residual: f64,
    pub iterations: usize,
    /// Largest observed ratio |T(G+δp) - T(G)| / |δp| over mass-zero probes.
    pub contraction_estimate: f64,
    pub bounds: DensityBounds,
    /// False when the drift has no periodic potential and G is the kernel of the frozen
    /// Fokker-Planck operator instead.
    pub zero_flux: bool,
    /// ⟨V⟩_G per component.
    pub mean_velocity: Vec<f64>,
    /// V̄ = V - ⟨V⟩_G sampled on the grid.
    pub vbar: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl EquilibriumState {
    /// ⟨a⟩_G.
    pub fn average(&self, model: &SampledModel, a: &[f64]) -> f64 {
        model.grid.dot(&self.g, a)
    }

    /// ⟨a, b⟩_G.
    pub fn inner(&self, model: &SampledModel, a: &[f64], b: &[f64]) -> f64 {
        let w = model.grid.weight();
        a.iter().zip(b).zip(&self.g).map(|((x, y), g)| x * y * g).sum::<f64>() * w
    }

    pub fn is_non_contractive(&self) -> bool {
        self.contraction_estimate >= 1.0
    }
}

fn normalize(model: &SampledModel, g: &mut [f64]) {
    let z = model.grid.quad(g);
    for x in g.iter_mut() {
        *x /= z;
    }
}

/// Drift ∂_θU + F(G) and whether it integrates to zero over the circle.
fn drift(model: &SampledModel, g: &[f64]) -> (Vec<f64>, bool) {
    let f = model.convolve_f(g);
    let b: Vec<f64> = model.du.iter().zip(&f).map(|(u, f)| u + f).collect();
    let mass = model.grid.quad(&b);
    let scale = model.grid.quad(&b.iter().map(|x| x.abs()).collect::<Vec<_>>());
    (b, mass.abs() <= TOL_MEAN * scale.max(1e-300))
}

/// Density in the kernel of g ↦ ∂(Γ(bg + ∂g)) on the non-Nyquist subspace.
fn frozen_kernel(model: &SampledModel, b: &[f64]) -> Vec<f64> {
    let m = model.m();
    let d = model.grid.diff_matrix();
    let inner = DMatrix::from_diagonal(&DVector::from_column_slice(b)) + &d;
    let gam = DMatrix::from_diagonal(&DVector::from_column_slice(&model.gamma));
    let a = &d * gam * inner;
    let phi = model.grid.resolved_basis();
    let red = phi.transpose() * a * &phi;
    let svd = red.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let (imin, _) = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &s)| {
        if s < acc.1 {
            (i, s)
        } else {
            acc
        }
    });
    let x = vt.row(imin).transpose();
    let mut g: Vec<f64> = (&phi * x).as_slice().to_vec();
    if g.iter().sum::<f64>() < 0.0 {
        g.iter_mut().for_each(|v| *v = -*v);
    }
    debug_assert_eq!(g.len(), m);
    g.iter_mut().for_each(|v| *v = v.max(1e-300));
    normalize(model, &mut g);
    g
}

/// One application of the fixed-point map T.
pub fn fixed_point_map(model: &SampledModel, g: &[f64]) -> Vec<f64> {
    let (b, periodic) = drift(model, g);
    if !periodic {
        return frozen_kernel(model, &b);
    }
    let h = model.grid.antiderivative(&b, 1e-8).expect("drift mass checked above");
    let hmin = h.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut out: Vec<f64> = h.iter().map(|x| (-(x - hmin)).exp()).collect();
    normalize(model, &mut out);
    out
}

fn bounds(model: &SampledModel, g: &[f64]) -> DensityBounds {
    let dlog = model.dgamma.iter().zip(&model.gamma).map(|(d, g)| (d / g).abs()).fold(0.0, f64::max);
    let k = sup_norm(&model.du) + model.force_sup() + dlog;
    let lower = (-2.0 * PI * k).exp() / (4.0 * PI);
    let upper = (2.0 * PI * k).exp() / PI;
    let min_g = g.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_g = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    DensityBounds { lower, upper, min_g, max_g, satisfied: min_g >= lower && max_g <= upper }
}

/// Sup norm of the zero-flux expression (or of its divergence when the flux need not vanish).
pub fn flux_residual(model: &SampledModel, g: &[f64]) -> (f64, bool) {
    let (b, periodic) = drift(model, g);
    let dg = model.grid.d_theta(g);
    let flux: Vec<f64> = b.iter().zip(g).zip(&dg).map(|((b, g), d)| b * g + d).collect();
    if periodic {
        (sup_norm(&flux), true)
    } else {
        let gf: Vec<f64> = flux.iter().zip(&model.gamma).map(|(f, gm)| f * gm).collect();
        (sup_norm(&model.grid.d_theta(&gf)), false)
    }
}

/// Observed Lipschitz ratio of T around `g` for small mass-zero perturbations.
pub fn contraction_estimate(model: &SampledModel, g: &[f64]) -> f64 {
    let delta = 1e-6;
    let base = fixed_point_map(model, g);
    let mut worst: f64 = 0.0;
    for k in 1..=3 {
        for phase in 0..2 {
            let p: Vec<f64> = model
                .grid
                .nodes()
                .iter()
                .map(|&t| if phase == 0 { (k as f64 * t).cos() } else { (k as f64 * t).sin() })
                .collect();
            let pert: Vec<f64> = g.iter().zip(&p).map(|(g, p)| g + delta * p).collect();
            let out = fixed_point_map(model, &pert);
            let diff = sup_norm(&out.iter().zip(&base).map(|(a, b)| a - b).collect::<Vec<_>>());
            worst = worst.max(diff / (delta * sup_norm(&p)));
        }
    }
    worst
}

/// Solves for G starting from the uniform density.
pub fn solve_equilibrium(model: &SampledModel, opts: &EquilibriumOptions) -> Result<EquilibriumState> {
    let init = vec![1.0 / (2.0 * PI); model.m()];
    solve_equilibrium_from(model, opts, &init)
}

/// Solves for G from a given positive initial density.
pub fn solve_equilibrium_from(
    model: &SampledModel,
    opts: &EquilibriumOptions,
    initial: &[f64],
) -> Result<EquilibriumState> {
    if initial.len() != model.m() || initial.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::DimensionMismatch("initial density must be positive on the grid".into()));
    }
    let mut g = initial.to_vec();
    normalize(model, &mut g);
    let mut alpha = opts.damping;
    let mut prev = f64::INFINITY;
    let mut diff = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let tg = fixed_point_map(model, &g);
        diff = sup_norm(&tg.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<_>>());
        if diff < opts.tol_iter {
            g = tg;
            converged = true;
            break;
        }
        if diff > prev {
            alpha = (alpha * 0.5).max(1.0 / 1024.0);
        }
        prev = diff;
        for (x, t) in g.iter_mut().zip(&tg) {
            *x = (1.0 - alpha) * *x + alpha * t;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations, residual: diff });
    }
    let (residual, zero_flux) = flux_residual(model, &g);
    let mut warnings = Vec::new();
    if !zero_flux {
        warnings.push("drift has no periodic potential: non-equilibrium model, G taken as the stationary kernel".into());
    }
    if residual > opts.tol_eq {
        return Err(Error::NoConvergence { iterations, residual });
    }
    let tg = fixed_point_map(model, &g);
    let fixed_point_residual = sup_norm(&tg.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<_>>());
    let contraction = contraction_estimate(model, &g);
    if contraction >= 1.0 {
        warnings.push(format!("NonContractive: contraction estimate {contraction:.4} >= 1"));
    }
    let bounds = bounds(model, &g);
    if !bounds.satisfied {
        warnings.push("density bounds violated".into());
    }
    let h = g.iter().map(|x| -x.ln()).collect();
    let mean_velocity: Vec<f64> = model.v.iter().map(|v| model.grid.dot(&g, v)).collect();
    let vbar = model.v.iter().zip(&mean_velocity).map(|(v, m)| v.iter().map(|x| x - m).collect()).collect();
    Ok(EquilibriumState {
        g,
        h,
        residual,
        fixed_point_residual,
        iterations,
        contraction_estimate: contraction,
        bounds,
        zero_flux,
        mean_velocity,
        vbar,
        warnings,
    })
}

/// Report of repeated solves from random initial densities.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub trials: usize,
    pub max_pairwise_distance: f64,
    pub contraction_estimates: Vec<f64>,
    pub non_contractive: bool,
}

/// Random smooth positive density exp(Σ_{k≤3} a_k cos kθ + b_k sin kθ).
pub fn random_density(model: &SampledModel, rng: &mut impl Rng) -> Vec<f64> {
    let coefs: Vec<f64> = (0..6).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut g: Vec<f64> = model
        .grid
        .nodes()
        .iter()
        .map(|&t| {
            (1..=3)
                .map(|k| {
                    let kt = k as f64 * t;
                    coefs[2 * k - 2] * kt.cos() + coefs[2 * k - 1] * kt.sin()
                })
                .sum::<f64>()
                .exp()
        })
        .collect();
    normalize(model, &mut g);
    g
}

/// Solves from `trials` random initial densities and compares the results.
pub fn uniqueness_probe(
    model: &SampledModel,
    opts: &EquilibriumOptions,
    trials: usize,
    seed: u64,
) -> Result<UniquenessReport> {
    let states: Vec<Result<EquilibriumState>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let init = random_density(model, &mut rng);
            solve_equilibrium_from(model, opts, &init)
        })
        .collect();
    let states = states.into_iter().collect::<Result<Vec<_>>>()?;
    let mut dist: f64 = 0.0;
    for i in 0..states.len() {
        for j in i + 1..states.len() {
            let d = sup_norm(&states[i].g.iter().zip(&states[j].g).map(|(a, b)| a - b).collect::<Vec<_>>());
            dist = dist.max(d);
        }
    }
    let contraction_estimates: Vec<f64> = states.iter().map(|s| s.contraction_estimate).collect();
    let non_contractive = contraction_estimates.iter().any(|&c| c >= 1.0);
    Ok(UniquenessReport { trials, max_pairwise_distance: dist, contraction_estimates, non_contractive })
}

/// sup_j |g(θ_j) - g(-θ_j)|.
pub fn parity_defect(g: &[f64]) -> f64 {
    let m = g.len();
    (0..m).map(|j| (g[j] - g[(m - j) % m]).abs()).fold(0.0, f64::max)
}
