//! Rate functionals on density paths: the finite-ε kinetic functional, its small-ε limit,
//! the lower-bound pairing, recovery sequences and the convergence sweep.
//!
//! Times are diffusive: the kinetic equation in the moving frame reads
//! ε∂_t f + T_0 f - ε⁻¹D_f(f) = 0, so that A = ε∂_t f + T_0 f - ε⁻¹D_f(f) measures the defect.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::{pinv_sym, to_dmatrix};
use crate::error::{Error, Result};
use crate::grid::{PhaseField, SpatialGrid, TensorField, TOL_MEAN};
use crate::hminus::{fiber_norm_sq, spatial_weighted_norm_sq, RateValue};
use crate::linops::{apply_d_f, apply_t0};
use crate::problem::Problem;
use crate::stats::fit_order;

/// Relative tolerance on the angular mass of A before a fiber counts as infeasible.
pub const TOL_FIBER_MASS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub enum PathValues {
    General(Vec<PhaseField>),
    /// f = ρ(q,t) G(θ).
    LocalEquilibrium { rho: Vec<Vec<f64>>, g: Vec<f64> },
}

/// Time slices of a density f(q,θ,t).
#[derive(Clone, Debug)]
pub struct DensityPath {
    pub times: Vec<f64>,
    pub values: PathValues,
}

/// Finite-difference weights for ∂_t at slice `s`: central (second order) in the interior,
/// one-sided three-point at the ends.
pub fn fd_weights(times: &[f64], s: usize) -> Vec<(usize, f64)> {
    let n = times.len();
    if n < 2 {
        return vec![];
    }
    if n == 2 {
        let h = times[1] - times[0];
        return vec![(0, -1.0 / h), (1, 1.0 / h)];
    }
    if s == 0 {
        let (h1, h2) = (times[1] - times[0], times[2] - times[1]);
        vec![
            (0, -(2.0 * h1 + h2) / (h1 * (h1 + h2))),
            (1, (h1 + h2) / (h1 * h2)),
            (2, -h1 / (h2 * (h1 + h2))),
        ]
    } else if s == n - 1 {
        let (h1, h2) = (times[n - 2] - times[n - 3], times[n - 1] - times[n - 2]);
        vec![
            (n - 3, h2 / (h1 * (h1 + h2))),
            (n - 2, -(h1 + h2) / (h1 * h2)),
            (n - 1, (2.0 * h2 + h1) / (h2 * (h1 + h2))),
        ]
    } else {
        let (h1, h2) = (times[s] - times[s - 1], times[s + 1] - times[s]);
        vec![
            (s - 1, -h2 / (h1 * (h1 + h2))),
            (s, (h2 - h1) / (h1 * h2)),
            (s + 1, h1 / (h2 * (h1 + h2))),
        ]
    }
}

/// Trapezoid weights for integration over `times`.
pub fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let h = times[i + 1] - times[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

fn combine(weights: &[(usize, f64)], get: impl Fn(usize) -> Vec<f64>, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for &(i, w) in weights {
        for (o, x) in out.iter_mut().zip(get(i)) {
            *o += w * x;
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathCheck {
    pub min_value: f64,
    pub mass_drift: f64,
    pub valid: bool,
}

impl DensityPath {
    pub fn local_equilibrium(times: Vec<f64>, rho: Vec<Vec<f64>>, g: Vec<f64>) -> Self {
        DensityPath { times, values: PathValues::LocalEquilibrium { rho, g } }
    }

    pub fn general(times: Vec<f64>, slices: Vec<PhaseField>) -> Self {
        DensityPath { times, values: PathValues::General(slices) }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_local_equilibrium(&self) -> bool {
        matches!(self.values, PathValues::LocalEquilibrium { .. })
    }

    pub fn rho(&self) -> Option<&[Vec<f64>]> {
        match &self.values {
            PathValues::LocalEquilibrium { rho, .. } => Some(rho),
            PathValues::General(_) => None,
        }
    }

    pub fn slice(&self, s: usize) -> PhaseField {
        match &self.values {
            PathValues::General(v) => v[s].clone(),
            PathValues::LocalEquilibrium { rho, g } => PhaseField::product(&rho[s], g),
        }
    }

    /// ∂_t f at slice `s`.
    pub fn dt_slice(&self, s: usize) -> PhaseField {
        let w = fd_weights(&self.times, s);
        let proto = self.slice(s);
        let data = match &self.values {
            PathValues::General(v) => combine(&w, |i| v[i].data.clone(), proto.data.len()),
            PathValues::LocalEquilibrium { rho, g } => {
                let r = combine(&w, |i| rho[i].clone(), rho[s].len());
                PhaseField::product(&r, g).data
            }
        };
        PhaseField { nq: proto.nq, m: proto.m, data }
    }

    /// ∂_t ρ at slice `s` (local-equilibrium paths only).
    pub fn rho_dt(&self, s: usize) -> Option<Vec<f64>> {
        let rho = self.rho()?;
        Some(combine(&fd_weights(&self.times, s), |i| rho[i].clone(), rho[s].len()))
    }

    /// Positivity and mass conservation of the slices.
    pub fn check(&self, space: &SpatialGrid, grid: &crate::grid::AngularGrid) -> PathCheck {
        let mut min_value = f64::INFINITY;
        let mut masses = Vec::with_capacity(self.len());
        for s in 0..self.len() {
            let f = self.slice(s);
            min_value = min_value.min(f.min());
            masses.push(f.total_mass(space, grid));
        }
        let m0 = masses[0].abs().max(1e-300);
        let mass_drift = masses.iter().map(|m| (m - masses[0]).abs() / m0).fold(0.0, f64::max);
        PathCheck { min_value, mass_drift, valid: min_value >= 0.0 && mass_drift < 1e-8 }
    }
}

/// ρ(q,t) = 1 + amplitude·cos(2π·mode·q₁/L₁)·e^{-decay·t}.
pub fn cosine_rho_path(space: &SpatialGrid, times: &[f64], amplitude: f64, mode: usize, decay: f64) -> Vec<Vec<f64>> {
    let l = space.extents()[0];
    let k = 2.0 * std::f64::consts::PI * mode as f64 / l;
    times
        .iter()
        .map(|&t| space.sample(|x| 1.0 + amplitude * (k * x[0]).cos() * (-decay * t).exp()))
        .collect()
}

/// Decay rate of the cosine mode under ∂_tρ = ∇·D∇ρ.
pub fn diffusion_decay(p: &Problem, mode: usize) -> f64 {
    let l = p.space.extents()[0];
    let k = 2.0 * std::f64::consts::PI * mode as f64 / l;
    p.coeffs.dmat[0][0] * k * k
}

pub fn uniform_times(t_final: f64, slices: usize) -> Vec<f64> {
    (0..slices).map(|i| t_final * i as f64 / (slices - 1).max(1) as f64).collect()
}

/// A = ε∂_t f + T_0 f - ε⁻¹D_f(f) at slice `s`.
pub fn a_eps(path: &DensityPath, p: &Problem, eps: f64, s: usize) -> Result<PhaseField> {
    if !(eps > 0.0) {
        return Err(Error::config("epsilon", "must be positive"));
    }
    let f = path.slice(s);
    let dtf = path.dt_slice(s);
    let t0 = apply_t0(&p.space, &p.eq, &f);
    let d = apply_d_f(&p.model, &f)?;
    let data = (0..f.data.len()).map(|i| eps * dtf.data[i] + t0.data[i] - d.data[i] / eps).collect();
    Ok(PhaseField { nq: f.nq, m: f.m, data })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateProfile {
    pub value: RateValue,
    /// ∫dq ‖A‖²_{-1,Γf} per slice.
    pub per_slice: Vec<RateValue>,
}

fn slice_rate(path: &DensityPath, p: &Problem, eps: f64, s: usize) -> Result<RateValue> {
    let a = a_eps(path, p, eps, s)?;
    let f = path.slice(s);
    let grid = p.grid();
    // fiber masses are judged against the largest fiber of the slice, so nearly vanishing
    // fibers are not rejected for roundoff
    let scale = (0..f.nq)
        .map(|q| grid.weight() * a.fiber(q).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut total = 0.0;
    for q in 0..f.nq {
        let h: Vec<f64> = f.fiber(q).iter().zip(&p.model.gamma).map(|(x, g)| x * g).collect();
        let mass = grid.quad(a.fiber(q));
        if mass.abs() > TOL_FIBER_MASS * scale {
            return Ok(RateValue::Infinite);
        }
        let fiber: Vec<f64> = a.fiber(q).iter().map(|x| x - mass / (2.0 * std::f64::consts::PI)).collect();
        match fiber_norm_sq(grid, &fiber, &h, f64::INFINITY)?.value {
            RateValue::Finite(v) => total += v,
            RateValue::Infinite => return Ok(RateValue::Infinite),
        }
    }
    Ok(RateValue::Finite(total * p.space.cell_volume()))
}

fn integrate(times: &[f64], per_slice: &[RateValue]) -> RateValue {
    let w = trapezoid_weights(times);
    let mut acc = RateValue::Finite(0.0);
    for (v, w) in per_slice.iter().zip(w) {
        acc = acc + v.scale(w);
    }
    acc.scale(0.25)
}

/// I^ε(f) = ¼ ∫dt ∫dq ‖A‖²_{-1,Γf}.
pub fn rate_eps(path: &DensityPath, p: &Problem, eps: f64) -> Result<RateProfile> {
    let per_slice: Vec<RateValue> = (0..path.len())
        .into_par_iter()
        .map(|s| slice_rate(path, p, eps, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(RateProfile { value: integrate(&path.times, &per_slice), per_slice })
}

/// ∂_tρ - ∇·(D∇ρ) at slice `s`.
pub fn diffusion_residual(path: &DensityPath, p: &Problem, s: usize) -> Option<Vec<f64>> {
    residual_parts(path, p, s).map(|r| r.0)
}

/// The residual together with the size of its two terms, used to judge its spatial mean.
fn residual_parts(path: &DensityPath, p: &Problem, s: usize) -> Option<(Vec<f64>, f64)> {
    let rho = &path.rho()?[s];
    let dt = path.rho_dt(s)?;
    let n = p.dim();
    let grad = p.space.grad(rho);
    let flux: Vec<Vec<f64>> = (0..n)
        .map(|k| (0..rho.len()).map(|i| (0..n).map(|l| p.coeffs.dmat[k][l] * grad[l][i]).sum()).collect())
        .collect();
    let div = p.space.div(&flux);
    let scale = p.space.quad(&dt.iter().map(|x| x.abs()).collect::<Vec<_>>())
        + p.space.quad(&div.iter().map(|x| x.abs()).collect::<Vec<_>>());
    Some((dt.iter().zip(&div).map(|(a, b)| a - b).collect(), scale))
}

/// Residual with its roundoff-level spatial mean removed; errors if the mean is genuine.
fn mean_free_residual(path: &DensityPath, p: &Problem, s: usize) -> Result<Vec<f64>> {
    let (mut r, scale) = residual_parts(path, p, s).ok_or_else(|| Error::config("rate.path", "expected a local-equilibrium path"))?;
    let mass = p.space.quad(&r);
    if mass.abs() > TOL_MEAN * scale.max(1e-300) && mass.abs() > 0.0 {
        return Err(Error::NonZeroMean { mean: mass / p.space.volume(), tol: TOL_MEAN });
    }
    let mean = mass / p.space.volume();
    r.iter_mut().for_each(|x| *x -= mean);
    Ok(r)
}

fn flat(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LimitProfile {
    pub value: RateValue,
    pub per_slice: Vec<RateValue>,
    /// Largest relative gap between the sup-form and inf-form values over slices.
    pub duality_gap: f64,
}

/// I_T(ρ) = ¼ ∫ ‖∂_tρ - ∇·D∇ρ‖²_{-1,ρσ} dt; +∞ for paths that are not local equilibria.
pub fn rate_limit(path: &DensityPath, p: &Problem) -> Result<LimitProfile> {
    let rho = match path.rho() {
        Some(r) => r,
        None => {
            return Ok(LimitProfile { value: RateValue::Infinite, per_slice: vec![RateValue::Infinite; path.len()], duality_gap: 0.0 })
        }
    };
    let sigma = flat(&p.coeffs.sigma);
    let rows: Vec<(RateValue, f64)> = (0..path.len())
        .into_par_iter()
        .map(|s| {
            let r = match mean_free_residual(path, p, s) {
                Ok(r) => r,
                Err(Error::NonZeroMean { .. }) => return Ok((RateValue::Infinite, 0.0)),
                Err(e) => return Err(e),
            };
            let chi = TensorField::scaled(p.dim(), &rho[s], &sigma);
            let res = spatial_weighted_norm_sq(&p.space, &r, &chi, TOL_MEAN)?;
            let gap = match (res.value, res.inf_value, res.sup_value) {
                (RateValue::Finite(v), Some(i), Some(su)) => {
                    let scale = v.abs().max(1e-300);
                    ((i - v).abs().max((su - v).abs())) / scale
                }
                _ => 0.0,
            };
            Ok((res.value, if res.value.finite() == Some(0.0) { 0.0 } else { gap }))
        })
        .collect::<Result<Vec<_>>>()?;
    let per_slice: Vec<RateValue> = rows.iter().map(|r| r.0).collect();
    let duality_gap = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(LimitProfile { value: integrate(&path.times, &per_slice), per_slice, duality_gap })
}

/// Recovery family f^ε = ρG + ε f₁ with f₁ = -G[ω·∇ρ + ξ·a].
#[derive(Clone, Debug)]
pub struct RecoverySequence {
    pub epsilon: f64,
    /// Optimal control a(q,t): `a[s][k][q]`.
    pub a: Vec<Vec<Vec<f64>>>,
    /// Potential φ of the control at each slice.
    pub phi: Vec<Vec<f64>>,
    pub corrector: Vec<PhaseField>,
    /// f^ε as a general path.
    pub path: DensityPath,
    pub min_density: f64,
}

/// Builds the recovery family for a local-equilibrium path.
///
/// The control is a = -ρ R⁺Eᵀ∇φ with ∇·(ρ E R⁺Eᵀ ∇φ) = -(∂_tρ - ∇·D∇ρ), which makes the angular
/// mass of A vanish; with the canonical ξ one has E R⁺ Eᵀ = σ and a = -ρ∇φ.
pub fn build_recovery(base: &DensityPath, p: &Problem, eps: f64) -> Result<RecoverySequence> {
    let (rho, g) = match &base.values {
        PathValues::LocalEquilibrium { rho, g } => (rho, g),
        PathValues::General(_) => return Err(Error::config("rate.path", "recovery needs a local-equilibrium path")),
    };
    let n = p.dim();
    let nq = p.space.len();
    let m = p.model.m();
    if rho.iter().flatten().any(|&r| !(r > 0.0)) {
        return Err(Error::config("rate.path", "density must be positive"));
    }
    let e = to_dmatrix(&p.coeffs.emat);
    let rinv = pinv_sym(&to_dmatrix(&p.coeffs.rmat), 1e-12);
    let gain = &rinv * e.transpose();
    let s_eff = &e * &gain;
    let s_eff = (&s_eff + s_eff.transpose()) * 0.5;
    let s_flat: Vec<f64> = (0..n * n).map(|i| s_eff[(i / n, i % n)]).collect();

    let per: Vec<(Vec<Vec<f64>>, Vec<f64>, PhaseField)> = (0..base.len())
        .into_par_iter()
        .map(|s| {
            let r = mean_free_residual(base, p, s)?;
            let chi = TensorField::scaled(n, &rho[s], &s_flat);
            let phi = p.space.solve_weighted_poisson(&chi, &r, TOL_MEAN, crate::grid::TOL_LIN)?.phi;
            let gphi = p.space.grad(&phi);
            let a: Vec<Vec<f64>> = (0..n)
                .map(|k| (0..nq).map(|i| -rho[s][i] * (0..n).map(|l| gain[(k, l)] * gphi[l][i]).sum::<f64>()).collect())
                .collect();
            let grho = p.space.grad(&rho[s]);
            let mut f1 = PhaseField::zeros(nq, m);
            for i in 0..nq {
                let fib = f1.fiber_mut(i);
                for j in 0..m {
                    let mut v = 0.0;
                    for k in 0..n {
                        v += p.coeffs.omega[k][j] * grho[k][i] + p.coeffs.xi[k][j] * a[k][i];
                    }
                    fib[j] = -g[j] * v;
                }
            }
            Ok((a, phi, f1))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut a_all = Vec::new();
    let mut phi_all = Vec::new();
    let mut corr = Vec::new();
    let mut slices = Vec::new();
    let mut min_density = f64::INFINITY;
    for (s, (a, phi, f1)) in per.into_iter().enumerate() {
        let mut f = PhaseField::product(&rho[s], g);
        for (x, c) in f.data.iter_mut().zip(&f1.data) {
            *x += eps * c;
        }
        min_density = min_density.min(f.min());
        slices.push(f);
        a_all.push(a);
        phi_all.push(phi);
        corr.push(f1);
    }
    if !(min_density > 0.0) {
        return Err(Error::EpsilonTooLarge { epsilon: eps, min_value: min_density });
    }
    Ok(RecoverySequence {
        epsilon: eps,
        a: a_all,
        phi: phi_all,
        corrector: corr,
        path: DensityPath::general(base.times.clone(), slices),
        min_density,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LiminfBound {
    /// ¼∫dt {2⟨φ^ε, A⟩ - ⟨(∂_θφ^ε)², Γf⟩}: a lower bound for I^ε(f).
    pub value: f64,
    /// ε → 0 limit of the pairing, ¼∫dt {2∫φ r - ∫ρ∇φ·σ∇φ} (expansion families only).
    pub limit_value: Option<f64>,
}

/// Lower-bound pairing with explicit test functions.
///
/// With a local-equilibrium `base`, φ^ε = ε⁻¹φ₋₁ + ψ·∇φ₋₁ where ∇·(ρσ∇φ₋₁) = -(∂_tρ - ∇·D∇ρ).
/// Without it, φ^ε = ε⁻¹m with m the fiberwise optimal multiplier of -D_f(f), which detects
/// departures from local equilibrium at order ε⁻².
pub fn liminf_bound(path: &DensityPath, base: Option<&DensityPath>, p: &Problem, eps: f64) -> Result<LiminfBound> {
    let n = p.dim();
    let grid = p.grid();
    let sigma = flat(&p.coeffs.sigma);
    let dpsi: Vec<Vec<f64>> = p.coeffs.psi.iter().map(|x| grid.d_theta(x)).collect();
    let rows: Vec<(f64, f64)> = (0..path.len())
        .into_par_iter()
        .map(|s| {
            let a = a_eps(path, p, eps, s)?;
            let f = path.slice(s);
            let mut pair = 0.0;
            let mut limit = 0.0;
            match base.and_then(|b| b.rho().map(|r| (b, r))) {
                Some((b, rho)) => {
                    let r = mean_free_residual(b, p, s)?;
                    let chi = TensorField::scaled(n, &rho[s], &sigma);
                    let phi = p.space.solve_weighted_poisson(&chi, &r, TOL_MEAN, crate::grid::TOL_LIN)?.phi;
                    let gphi = p.space.grad(&phi);
                    for q in 0..f.nq {
                        let af = a.fiber(q);
                        let ff = f.fiber(q);
                        let mut t = 0.0;
                        for j in 0..f.m {
                            let mut val = phi[q] / eps;
                            let mut der = 0.0;
                            for k in 0..n {
                                val += p.coeffs.psi[k][j] * gphi[k][q];
                                der += dpsi[k][j] * gphi[k][q];
                            }
                            t += 2.0 * val * af[j] - p.model.gamma[j] * ff[j] * der * der;
                        }
                        pair += t * grid.weight();
                    }
                    let flux = p.space.apply_tensor(&chi, &gphi);
                    for q in 0..f.nq {
                        let dir: f64 = (0..n).map(|k| gphi[k][q] * flux[k][q]).sum();
                        limit += 2.0 * phi[q] * r[q] - dir;
                    }
                }
                None => {
                    let d = apply_d_f(&p.model, &f)?;
                    for q in 0..f.nq {
                        let h: Vec<f64> = f.fiber(q).iter().zip(&p.model.gamma).map(|(x, g)| x * g).collect();
                        let neg: Vec<f64> = d.fiber(q).iter().map(|x| -x).collect();
                        let res = fiber_norm_sq(grid, &neg, &h, 1e-6)?;
                        let mult = res.multiplier.unwrap_or_else(|| vec![0.0; f.m]);
                        let phi: Vec<f64> = mult.iter().map(|x| x / eps).collect();
                        let dphi = grid.d_theta(&phi);
                        let af = a.fiber(q);
                        let t: f64 = (0..f.m).map(|j| 2.0 * phi[j] * af[j] - h[j] * dphi[j] * dphi[j]).sum();
                        pair += t * grid.weight();
                    }
                }
            }
            Ok((pair * p.space.cell_volume(), limit * p.space.cell_volume()))
        })
        .collect::<Result<Vec<_>>>()?;
    let w = trapezoid_weights(&path.times);
    let value = 0.25 * rows.iter().zip(&w).map(|(r, w)| r.0 * w).sum::<f64>();
    let limit_value = base.map(|_| 0.25 * rows.iter().zip(&w).map(|(r, w)| r.1 * w).sum::<f64>());
    Ok(LiminfBound { value, limit_value })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub rate_eps: RateValue,
    pub liminf_bound: f64,
    pub rate_limit: RateValue,
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaSweepReport {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of log|I^ε - I_T| against log ε.
    pub order: f64,
    pub monotone: bool,
    pub sandwich: bool,
    pub liminf_limit: Option<f64>,
}

/// Evaluates recovery sequences and lower bounds along a decreasing ε ladder.
pub fn gamma_sweep(base: &DensityPath, p: &Problem, ladder: &[f64]) -> Result<GammaSweepReport> {
    let limit = rate_limit(base, p)?.value;
    let mut ladder = ladder.to_vec();
    ladder.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let rows: Vec<(SweepRow, Option<f64>)> = ladder
        .par_iter()
        .map(|&eps| {
            let rec = build_recovery(base, p, eps)?;
            let ie = rate_eps(&rec.path, p, eps)?.value;
            let lb = liminf_bound(&rec.path, Some(base), p, eps)?;
            let gap = (ie.as_f64() - limit.as_f64()).abs();
            Ok((SweepRow { epsilon: eps, rate_eps: ie, liminf_bound: lb.value, rate_limit: limit, gap }, lb.limit_value))
        })
        .collect::<Result<Vec<_>>>()?;
    let liminf_limit = rows.first().and_then(|r| r.1);
    let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.0).collect();
    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    let order = if rows.len() >= 2 { fit_order(&eps, &gaps) } else { f64::NAN };
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    let sandwich = rows.iter().all(|r| r.liminf_bound <= r.rate_eps.as_f64() + 1e-9 * r.rate_eps.as_f64().abs().max(1.0));
    Ok(GammaSweepReport { rows, order, monotone, sandwich, liminf_limit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_weights_are_exact_for_quadratics() {
        let times = [0.0, 0.1, 0.25, 0.3, 0.5];
        let f = |t: f64| 1.0 + 2.0 * t - 3.0 * t * t;
        let df = |t: f64| 2.0 - 6.0 * t;
        for s in 0..times.len() {
            let d: f64 = fd_weights(&times, s).iter().map(|&(i, w)| w * f(times[i])).sum();
            assert!((d - df(times[s])).abs() < 1e-12, "slice {s}");
        }
    }

    #[test]
    fn trapezoid_weights_sum_to_length() {
        let w = trapezoid_weights(&[0.0, 0.2, 0.5, 1.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
