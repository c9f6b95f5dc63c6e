//! Deterministic integration of the mean-field kinetic equation
//! ∂_τ f = D_f(f) - εV·∇_q f in original time τ, and the Chapman-Enskog check of its
//! diffusive limit.
//!
//! The state is kept as spatial Fourier modes f̂_k(θ). The linear part (angular diffusion and
//! drift plus transport) is integrated exactly per mode with a precomputed matrix exponential;
//! the mean-field term ∂_θ(ΓF(f)f/Π(f)) is treated with a Lawson Runge-Kutta step.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumState;
use crate::error::{Error, Result};
use crate::grid::{PhaseField, SpatialGrid};
use crate::linops::{apply_d_f, EPS_MASS};
use crate::model::SampledModel;
use crate::problem::Problem;
use crate::ratefunc::DensityPath;
use crate::stats::{fit_order, linear_fit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Lab,
    /// Co-moving with the mean velocity ε⟨V⟩_G.
    Moving,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KineticOptions {
    /// Final original time τ.
    pub t_final: f64,
    /// Largest step; the effective step divides the sampling interval.
    pub dt: f64,
    pub frame: Frame,
    /// 1 (Lawson-Euler) or 2 (Lawson-Heun).
    pub scheme_order: u8,
    /// Number of stored slices, including τ = 0 and τ = t_final.
    pub samples: usize,
    pub blow_up_factor: f64,
}

impl Default for KineticOptions {
    fn default() -> Self {
        KineticOptions { t_final: 1.0, dt: 0.01, frame: Frame::Moving, scheme_order: 2, samples: 11, blow_up_factor: 1e3 }
    }
}

#[derive(Clone, Debug)]
pub struct KineticSolution {
    /// Slices at original times τ.
    pub path: DensityPath,
    pub frame: Frame,
    pub epsilon: f64,
    pub dt: f64,
    pub scheme_order: u8,
    pub steps: usize,
    /// Largest relative deviation of the total mass from its initial value.
    pub mass_drift: f64,
    /// Smallest value before clipping.
    pub min_value: f64,
    /// Number of stored nodes clipped to zero.
    pub clipped: usize,
    /// ε⟨V⟩_G, the velocity of the moving frame in original time.
    pub frame_velocity: Vec<f64>,
}

impl KineticSolution {
    /// The same slices on the diffusive clock t = ε²τ.
    pub fn to_diffusive_path(&self) -> DensityPath {
        let e2 = self.epsilon * self.epsilon;
        let mut p = self.path.clone();
        p.times.iter_mut().for_each(|t| *t *= e2);
        p
    }

    pub fn marginals(&self, grid: &crate::grid::AngularGrid) -> Vec<Vec<f64>> {
        (0..self.path.len()).map(|s| self.path.slice(s).marginal(grid)).collect()
    }
}

/// D_f(f) - ε v·∇_q f with v = V (lab) or V̄ (moving).
pub fn kinetic_rhs(model: &SampledModel, eq: &EquilibriumState, space: &SpatialGrid, f: &PhaseField, eps: f64, frame: Frame) -> Result<PhaseField> {
    let mut out = apply_d_f(model, f)?;
    let v = frame_velocity_field(model, eq, frame);
    for j in 0..f.m {
        let grad = space.grad(&f.column(j));
        for q in 0..f.nq {
            let mut s = 0.0;
            for (d, g) in grad.iter().enumerate() {
                s += v[d][j] * g[q];
            }
            out.data[q * f.m + j] -= eps * s;
        }
    }
    Ok(out)
}

fn frame_velocity_field(model: &SampledModel, eq: &EquilibriumState, frame: Frame) -> Vec<Vec<f64>> {
    match frame {
        Frame::Lab => model.v.clone(),
        Frame::Moving => eq.vbar.clone(),
    }
}

/// Shifts a lab-frame path into the moving frame: f̄(q,τ) = f(q + ε⟨V⟩τ, τ).
pub fn shift_to_moving_frame(space: &SpatialGrid, path: &DensityPath, velocity: &[f64]) -> DensityPath {
    let slices = (0..path.len())
        .map(|s| {
            let f = path.slice(s);
            let tau = path.times[s];
            let shift: Vec<f64> = velocity.iter().map(|v| v * tau).collect();
            let mut out = PhaseField::zeros(f.nq, f.m);
            for j in 0..f.m {
                let mut hat = space.forward(&f.column(j));
                for (i, c) in hat.iter_mut().enumerate() {
                    let (k, _) = space.wavevector(i);
                    let phase: f64 = (0..space.dim()).map(|d| k[d] * shift[d]).sum();
                    *c *= Complex64::from_polar(1.0, phase);
                }
                out.set_column(j, &space.inverse(hat));
            }
            out
        })
        .collect();
    DensityPath::general(path.times.clone(), slices)
}

/// Index of the mode -k.
fn partner(space: &SpatialGrid, idx: usize) -> usize {
    let mi = space.multi_index(idx);
    let c = space.counts();
    if space.dim() == 1 {
        (c[0] - mi[0]) % c[0]
    } else {
        ((c[0] - mi[0]) % c[0]) * c[1] + (c[1] - mi[1]) % c[1]
    }
}

struct Propagator {
    m: usize,
    a: DMatrix<f64>,
    /// ε k·v(θ_j) per mode, Nyquist components dropped.
    advect: Vec<Vec<f64>>,
    dt: f64,
    cache: Vec<OnceLock<DMatrix<f64>>>,
}

impl Propagator {
    fn new(model: &SampledModel, space: &SpatialGrid, v: &[Vec<f64>], eps: f64, dt: f64) -> Self {
        let m = model.m();
        let d = model.grid.diff_matrix();
        let gam = DMatrix::from_diagonal(&DVector::from_column_slice(&model.gamma));
        let du = DMatrix::from_diagonal(&DVector::from_column_slice(&model.du));
        let a = &d * gam * (du + &d);
        let advect = (0..space.len())
            .map(|i| {
                let (k, nyq) = space.wavevector(i);
                (0..m)
                    .map(|j| {
                        (0..space.dim()).filter(|&dd| !nyq[dd]).map(|dd| eps * k[dd] * v[dd][j]).sum()
                    })
                    .collect()
            })
            .collect();
        let cache = (0..space.len()).map(|_| OnceLock::new()).collect();
        Propagator { m, a, advect, dt, cache }
    }

    fn matrix(&self, idx: usize) -> &DMatrix<f64> {
        self.cache[idx].get_or_init(|| {
            let m = self.m;
            let mut b = DMatrix::zeros(2 * m, 2 * m);
            b.view_mut((0, 0), (m, m)).copy_from(&self.a);
            b.view_mut((m, m), (m, m)).copy_from(&self.a);
            for j in 0..m {
                let c = self.advect[idx][j];
                b[(j, m + j)] = c;
                b[(m + j, j)] = -c;
            }
            let mut e = (b * self.dt).exp();
            if self.advect[idx].iter().all(|&c| c == 0.0) {
                // restore exact mass conservation lost to roundoff in the exponential
                for blk in [0, m] {
                    for c in blk..blk + m {
                        let s: f64 = (blk..blk + m).map(|r| e[(r, c)]).sum();
                        let fix = (1.0 - s) / m as f64;
                        for r in blk..blk + m {
                            e[(r, c)] += fix;
                        }
                    }
                }
            }
            e
        })
    }

    fn apply(&self, idx: usize, x: &[Complex64]) -> Vec<Complex64> {
        let m = self.m;
        let v = DVector::from_fn(2 * m, |r, _| if r < m { x[r].re } else { x[r - m].im });
        let w = self.matrix(idx) * v;
        (0..m).map(|j| Complex64::new(w[j], w[m + j])).collect()
    }
}

/// Spatial Fourier modes of a phase field: `hat[mode][j]`.
fn to_modes(space: &SpatialGrid, f: &PhaseField) -> Vec<Vec<Complex64>> {
    let cols: Vec<Vec<Complex64>> = (0..f.m).into_par_iter().map(|j| space.forward(&f.column(j))).collect();
    (0..f.nq).map(|i| (0..f.m).map(|j| cols[j][i]).collect()).collect()
}

fn from_modes(space: &SpatialGrid, hat: &[Vec<Complex64>], m: usize) -> PhaseField {
    let nq = hat.len();
    let cols: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| space.inverse((0..nq).map(|i| hat[i][j]).collect()))
        .collect();
    let mut f = PhaseField::zeros(nq, m);
    for (j, c) in cols.iter().enumerate() {
        f.set_column(j, c);
    }
    f
}

/// ∂_θ(Γ F(f)/Π(f) f) per fiber, as spatial modes.
fn nonlinear_modes(model: &SampledModel, space: &SpatialGrid, f: &PhaseField) -> Result<Vec<Vec<Complex64>>> {
    let m = f.m;
    let fibers: Vec<Vec<f64>> = (0..f.nq)
        .into_par_iter()
        .map(|q| {
            let fib = f.fiber(q);
            let mass = model.grid.quad(fib);
            if !(mass > EPS_MASS) {
                return Err(Error::VacuousDensity { node: q, mass });
            }
            let conv = model.convolve_f(fib);
            let flux: Vec<f64> = (0..m).map(|j| model.gamma[j] * conv[j] / mass * fib[j]).collect();
            Ok(model.grid.d_theta(&flux))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut nf = PhaseField::zeros(f.nq, m);
    for (q, v) in fibers.iter().enumerate() {
        nf.fiber_mut(q).copy_from_slice(v);
    }
    Ok(to_modes(space, &nf))
}

struct Stepper<'a> {
    model: &'a SampledModel,
    space: &'a SpatialGrid,
    prop: Propagator,
    partner: Vec<usize>,
    nonlinear: bool,
    order: u8,
}

impl Stepper<'_> {
    /// E·x for every mode, filling -k from +k by conjugate symmetry and skipping zero modes.
    fn propagate(&self, x: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        let mut out: Vec<Vec<Complex64>> = (0..x.len())
            .into_par_iter()
            .map(|i| {
                let p = self.partner[i];
                if p < i || x[i].iter().all(|c| c.re == 0.0 && c.im == 0.0) {
                    vec![Complex64::new(0.0, 0.0); x[i].len()]
                } else {
                    self.prop.apply(i, &x[i])
                }
            })
            .collect();
        for i in 0..x.len() {
            let p = self.partner[i];
            if p < i {
                out[i] = out[p].iter().map(|c| c.conj()).collect();
            }
        }
        out
    }

    fn step(&self, hat: &[Vec<Complex64>], phys: &PhaseField) -> Result<Vec<Vec<Complex64>>> {
        if !self.nonlinear {
            return Ok(self.propagate(hat));
        }
        let dt = self.prop.dt;
        let n0 = nonlinear_modes(self.model, self.space, phys)?;
        let axpy = |a: &[Vec<Complex64>], s: f64, b: &[Vec<Complex64>]| -> Vec<Vec<Complex64>> {
            a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v * s).collect()).collect()
        };
        let pred = self.propagate(&axpy(hat, dt, &n0));
        if self.order < 2 {
            return Ok(pred);
        }
        let pred_phys = from_modes(self.space, &pred, phys.m);
        let n1 = nonlinear_modes(self.model, self.space, &pred_phys)?;
        let half = self.propagate(&axpy(hat, 0.5 * dt, &n0));
        Ok(axpy(&half, 0.5 * dt, &n1))
    }
}

/// Integrates the kinetic equation with ε = `eps` from `f0` over [0, t_final] (original time).
pub fn integrate_kinetic(
    model: &SampledModel,
    eq: &EquilibriumState,
    space: &SpatialGrid,
    f0: &PhaseField,
    eps: f64,
    opts: &KineticOptions,
) -> Result<KineticSolution> {
    if space.dim() != model.dim() {
        return Err(Error::DimensionMismatch(format!("spatial grid dimension {} vs velocity dimension {}", space.dim(), model.dim())));
    }
    if f0.nq != space.len() || f0.m != model.m() {
        return Err(Error::DimensionMismatch("initial density does not match the grids".into()));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::config("kinetic.epsilon", "must be finite and >= 0"));
    }
    if !(opts.t_final > 0.0) || !(opts.dt > 0.0) || opts.samples < 2 {
        return Err(Error::config("kinetic", "t_final and dt must be positive and samples >= 2"));
    }
    if !(1..=2).contains(&opts.scheme_order) {
        return Err(Error::config("kinetic.scheme_order", "must be 1 or 2"));
    }
    if f0.min() < 0.0 {
        return Err(Error::config("kinetic.initial", "initial density must be nonnegative"));
    }
    for q in 0..f0.nq {
        let mass = model.grid.quad(f0.fiber(q));
        if !(mass > EPS_MASS) {
            return Err(Error::VacuousDensity { node: q, mass });
        }
    }

    let interval = opts.t_final / (opts.samples - 1) as f64;
    let per_sample = (interval / opts.dt).ceil().max(1.0) as usize;
    let dt = interval / per_sample as f64;
    let v = frame_velocity_field(model, eq, opts.frame);
    let stepper = Stepper {
        model,
        space,
        prop: Propagator::new(model, space, &v, eps, dt),
        partner: (0..space.len()).map(|i| partner(space, i)).collect(),
        nonlinear: model.has_interaction(),
        order: opts.scheme_order,
    };

    let grid = &model.grid;
    let mass0 = f0.total_mass(space, grid);
    let sup0 = f0.sup();
    let mut hat = to_modes(space, f0);
    let mut phys = f0.clone();
    let mut times = vec![0.0];
    let mut slices = vec![f0.clone()];
    let mut mass_drift: f64 = 0.0;
    let mut min_value = f0.min();
    let mut clipped = 0usize;
    let mut steps = 0usize;
    for s in 1..opts.samples {
        for _ in 0..per_sample {
            hat = stepper.step(&hat, &phys)?;
            steps += 1;
            if stepper.nonlinear {
                phys = from_modes(space, &hat, f0.m);
                check_blow_up(&phys, sup0, opts.blow_up_factor, steps as f64 * dt)?;
            }
        }
        if !stepper.nonlinear {
            phys = from_modes(space, &hat, f0.m);
            check_blow_up(&phys, sup0, opts.blow_up_factor, steps as f64 * dt)?;
        }
        let mass = phys.total_mass(space, grid);
        mass_drift = mass_drift.max((mass - mass0).abs() / mass0.abs());
        min_value = min_value.min(phys.min());
        let mut stored = phys.clone();
        for x in stored.data.iter_mut() {
            if *x < 0.0 {
                *x = 0.0;
                clipped += 1;
            }
        }
        times.push(s as f64 * interval);
        slices.push(stored);
    }
    Ok(KineticSolution {
        path: DensityPath::general(times, slices),
        frame: opts.frame,
        epsilon: eps,
        dt,
        scheme_order: opts.scheme_order,
        steps,
        mass_drift,
        min_value,
        clipped,
        frame_velocity: eq.mean_velocity.iter().map(|v| eps * v).collect(),
    })
}

fn check_blow_up(f: &PhaseField, sup0: f64, factor: f64, time: f64) -> Result<()> {
    let sup = f.data.iter().fold(0.0f64, |m, x| if x.is_finite() { m.max(x.abs()) } else { f64::INFINITY });
    if !sup.is_finite() || sup > factor * sup0 {
        return Err(Error::StepUnstable { time, sup });
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChapmanEnskogOptions {
    /// Observation time on the diffusive clock.
    pub t_diff: f64,
    pub ladder: Vec<f64>,
    /// Stored slices per run.
    pub samples: usize,
    /// Largest original-time step.
    pub dt: f64,
    pub scheme_order: u8,
}

impl Default for ChapmanEnskogOptions {
    fn default() -> Self {
        ChapmanEnskogOptions { t_diff: 1.0, ladder: vec![0.2, 0.1, 0.05, 0.025], samples: 21, dt: 0.5, scheme_order: 2 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChapmanEnskogRow {
    pub epsilon: f64,
    /// max_k |ρ̂_k(T) - ρ̂_k(0)e^{-k·Dk T}| / N_q.
    pub error: f64,
    /// Fitted decay rate of the lowest mode on the diffusive clock.
    pub decay_rate: f64,
    /// decay_rate / |k|².
    pub d_estimate: f64,
    pub d_rel_error: f64,
    pub mass_drift: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChapmanEnskogReport {
    pub rows: Vec<ChapmanEnskogRow>,
    /// Slope of log(error) against log ε.
    pub order: f64,
    /// Lowest wavevector carried by ρ₀.
    pub mode: Vec<f64>,
    /// k·Dk/|k|² predicted by the coefficients.
    pub d_predicted: f64,
}

/// Runs the kinetic equation in the moving frame to diffusive time `t_diff` for each ε and
/// compares the spatial marginal with the exact Fourier solution of ∂_tρ = ∇·D∇ρ.
pub fn chapman_enskog_check(p: &Problem, rho0: &[f64], opts: &ChapmanEnskogOptions) -> Result<ChapmanEnskogReport> {
    let space = &p.space;
    let n = p.dim();
    let nq = space.len() as f64;
    let rho_hat0 = space.forward(rho0);
    let amax = rho_hat0.iter().skip(1).map(|c| c.norm()).fold(0.0, f64::max);
    let kdk = |k: &[f64; 2]| -> f64 {
        (0..n).map(|a| (0..n).map(|b| k[a] * p.coeffs.dmat[a][b] * k[b]).sum::<f64>()).sum()
    };
    let lowest = (1..space.len())
        .filter(|&i| rho_hat0[i].norm() > 1e-12 * amax.max(1e-300) && !space.is_null_mode(i))
        .min_by(|&a, &b| {
            let ka = space.wavevector(a).0;
            let kb = space.wavevector(b).0;
            (ka[0].powi(2) + ka[1].powi(2)).partial_cmp(&(kb[0].powi(2) + kb[1].powi(2))).unwrap_or(std::cmp::Ordering::Equal)
        });
    let (mode, d_predicted) = match lowest {
        Some(i) => {
            let k = space.wavevector(i).0;
            (k[..n].to_vec(), kdk(&k) / (k[0] * k[0] + k[1] * k[1]))
        }
        None => (vec![0.0; n], p.coeffs.dmat[0][0]),
    };
    let f0 = PhaseField::product(rho0, &p.eq.g);
    let rows = opts
        .ladder
        .iter()
        .map(|&eps| {
            let kopts = KineticOptions {
                t_final: opts.t_diff / (eps * eps),
                dt: opts.dt,
                frame: Frame::Moving,
                scheme_order: opts.scheme_order,
                samples: opts.samples,
                blow_up_factor: 1e3,
            };
            let sol = integrate_kinetic(&p.model, &p.eq, space, &f0, eps, &kopts)?;
            let path = sol.to_diffusive_path();
            let marg = sol.marginals(p.grid());
            let last = space.forward(marg.last().expect("samples >= 2"));
            let mut error: f64 = 0.0;
            for i in 0..space.len() {
                let (k, nyq) = space.wavevector(i);
                let mut kk = k;
                for d in 0..2 {
                    if nyq[d] {
                        kk[d] = 0.0;
                    }
                }
                let exact = rho_hat0[i] * (-kdk(&kk) * opts.t_diff).exp();
                error = error.max((last[i] - exact).norm() / nq);
            }
            let (decay_rate, d_estimate) = match lowest {
                Some(i) => {
                    let mut ts = Vec::new();
                    let mut ls = Vec::new();
                    for (s, m) in marg.iter().enumerate() {
                        if path.times[s] >= 0.05 * opts.t_diff {
                            ts.push(path.times[s]);
                            ls.push(space.forward(m)[i].norm().ln());
                        }
                    }
                    let rate = -linear_fit(&ts, &ls).0;
                    let k = space.wavevector(i).0;
                    (rate, rate / (k[0] * k[0] + k[1] * k[1]))
                }
                None => (0.0, d_predicted),
            };
            Ok(ChapmanEnskogRow {
                epsilon: eps,
                error,
                decay_rate,
                d_estimate,
                d_rel_error: (d_estimate - d_predicted).abs() / d_predicted.abs().max(1e-300),
                mass_drift: sol.mass_drift,
                steps: sol.steps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let order = if rows.len() >= 2 { fit_order(&eps, &errs) } else { f64::NAN };
    Ok(ChapmanEnskogReport { rows, order, mode, d_predicted })
}
