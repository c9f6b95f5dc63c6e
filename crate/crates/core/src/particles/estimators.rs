//! Particle-level estimators: drift and diffusivity from displacements, stationary density
//! fluctuation spectrum, and distribution checks of the angular law.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{InitialAngles, ParticleState, ParticleSystem};
use crate::coeffs::Matrix;
use crate::error::{Error, Result};
use crate::model::{PairPotential, ModelSpec, TrigSeries};
use crate::problem::Problem;
use crate::stats::{block_bootstrap_mean, ks_pvalue, ks_statistic, linear_fit, mean, percentile, std_dev};

use std::f64::consts::PI;

fn unit_box(extents: &[f64], n: usize) -> Vec<f64> {
    if extents.is_empty() {
        vec![1.0; n]
    } else {
        extents.to_vec()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportOptions {
    pub n: usize,
    pub dt: f64,
    /// Relaxation time before displacements are recorded.
    pub burn_in: f64,
    /// Length of the recorded run (original time).
    pub t_final: f64,
    /// Start of the regression window.
    pub fit_start: f64,
    pub sample_every: f64,
    pub bootstrap: usize,
    pub seed: u64,
    /// Box extents; empty means the unit box.
    pub extents: Vec<f64>,
    /// Relative half-width of the acceptance band for the diffusivity.
    pub tolerance: f64,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions {
            n: 10_000,
            dt: 0.05,
            burn_in: 5.0,
            t_final: 50.0,
            fit_start: 5.0,
            sample_every: 0.5,
            bootstrap: 200,
            seed: 1,
            extents: vec![],
            tolerance: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransportReport {
    pub n: usize,
    pub epsilon: f64,
    pub dt: f64,
    pub window: [f64; 2],
    /// Time and particle average of V(θ_i).
    pub effective_drift: Vec<f64>,
    pub drift_std_error: Vec<f64>,
    /// ⟨V⟩_G from the equilibrium density.
    pub drift_predicted: Vec<f64>,
    /// Diffusivity on the diffusive clock t = ε²τ: slope of ½Cov(Δq) in τ divided by ε².
    pub effective_diffusivity: Matrix,
    pub diffusivity_std_error: Matrix,
    /// 95% percentile bootstrap intervals.
    pub diffusivity_ci: Vec<Vec<[f64; 2]>>,
    pub diffusivity_original_time: Matrix,
    pub diffusivity_predicted: Matrix,
    pub diffusivity_ok: bool,
    pub drift_ok: bool,
}

fn slopes(times: &[f64], disp: &[Vec<f64>], idx: &[usize], dim: usize) -> Vec<f64> {
    let nn = idx.len() as f64;
    let mut out = vec![0.0; dim * dim];
    for a in 0..dim {
        for b in a..dim {
            let ys: Vec<f64> = disp
                .iter()
                .map(|d| {
                    let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
                    for &i in idx {
                        let (x, y) = (d[i * dim + a], d[i * dim + b]);
                        sa += x;
                        sb += y;
                        sab += x * y;
                    }
                    0.5 * (sab - sa * sb / nn) / (nn - 1.0)
                })
                .collect();
            let s = linear_fit(times, &ys).0;
            out[a * dim + b] = s;
            out[b * dim + a] = s;
        }
    }
    out
}

fn to_matrix(v: &[f64], dim: usize) -> Matrix {
    (0..dim).map(|a| v[a * dim..(a + 1) * dim].to_vec()).collect()
}

/// Runs the particle system and estimates drift and diffusivity with bootstrap errors.
pub fn estimate_transport(p: &Problem, opts: &TransportOptions) -> Result<TransportReport> {
    Ok(estimate_transport_with_state(p, opts)?.0)
}

/// [`estimate_transport`] that also hands back the final particle state.
pub fn estimate_transport_with_state(p: &Problem, opts: &TransportOptions) -> Result<(TransportReport, ParticleState)> {
    let spec = &p.model.spec;
    let eps = spec.epsilon;
    if !(eps > 0.0) {
        return Err(Error::config("model.epsilon", "transport estimates need epsilon > 0"));
    }
    if opts.n < 2 || !(opts.sample_every > 0.0) || !(opts.t_final > opts.fit_start) {
        return Err(Error::InsufficientSamples("need n >= 2 and a nonempty regression window".into()));
    }
    let dim = spec.dim();
    let extents = unit_box(&opts.extents, dim);
    let mut sys = ParticleSystem::new(spec, &extents, opts.n, opts.seed, &InitialAngles::Density(p.eq.g.clone()))?;
    sys.check_dt(opts.dt)?;
    sys.run(opts.burn_in, opts.dt)?;
    sys.reset_displacement();

    let per_sample = (opts.sample_every / opts.dt).round().max(1.0) as usize;
    let n_samples = (opts.t_final / (per_sample as f64 * opts.dt)).round() as usize;
    let mut times = Vec::new();
    let mut disp = Vec::new();
    let mut vsum = vec![0.0; opts.n * dim];
    let mut vcount = 0usize;
    for s in 1..=n_samples {
        for _ in 0..per_sample {
            sys.step(opts.dt);
            for (i, &t) in sys.state.angles.iter().enumerate() {
                for (d, v) in spec.velocity.iter().enumerate() {
                    vsum[i * dim + d] += v.eval(t);
                }
            }
            vcount += 1;
        }
        let t = s as f64 * per_sample as f64 * opts.dt;
        if t >= opts.fit_start - 1e-9 {
            times.push(t);
            disp.push(sys.state.displacement.clone());
        }
    }
    if times.len() < 3 {
        return Err(Error::InsufficientSamples(format!("only {} samples in the regression window", times.len())));
    }

    let mut drift = vec![0.0; dim];
    let mut drift_se = vec![0.0; dim];
    for d in 0..dim {
        let per: Vec<f64> = (0..opts.n).map(|i| vsum[i * dim + d] / vcount as f64).collect();
        drift[d] = mean(&per);
        drift_se[d] = std_dev(&per) / (opts.n as f64).sqrt();
    }

    let all: Vec<usize> = (0..opts.n).collect();
    let est = slopes(&times, &disp, &all, dim);
    let base = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_b007);
    let reps: Vec<Vec<f64>> = (0..opts.bootstrap)
        .into_par_iter()
        .map(|r| {
            let mut rng = base.clone();
            rng.set_stream(r as u64);
            let idx: Vec<usize> = (0..opts.n).map(|_| rng.random_range(0..opts.n)).collect();
            slopes(&times, &disp, &idx, dim)
        })
        .collect();
    let scale = 1.0 / (eps * eps);
    let mut se = vec![0.0; dim * dim];
    let mut ci = vec![vec![[0.0; 2]; dim]; dim];
    for e in 0..dim * dim {
        let col: Vec<f64> = reps.iter().map(|r| r[e] * scale).collect();
        if col.len() >= 2 {
            se[e] = std_dev(&col);
            ci[e / dim][e % dim] = [percentile(&col, 0.025), percentile(&col, 0.975)];
        }
    }
    let d_diff: Vec<f64> = est.iter().map(|x| x * scale).collect();
    let pred = &p.coeffs.dmat;
    let tol = opts.tolerance;
    let diag_scale = (0..dim).map(|a| pred[a][a].abs()).fold(0.0, f64::max);
    // roundoff level of a covariance slope of displacements that grow like the drift
    let drift2: f64 = drift.iter().map(|v| v * v).sum();
    let floor = 1e-12 * (1.0 + drift2 * opts.t_final);
    let mut diffusivity_ok = true;
    for a in 0..dim {
        for b in 0..dim {
            if a == b {
                let (lo, hi) = (pred[a][a] * (1.0 - tol), pred[a][a] * (1.0 + tol));
                let c = ci[a][b];
                if diag_scale > floor {
                    diffusivity_ok &= c[0] >= lo && c[1] <= hi;
                } else {
                    diffusivity_ok &= d_diff[a * dim + b].abs() <= 3.0 * se[a * dim + b] + floor;
                }
            } else {
                diffusivity_ok &= (d_diff[a * dim + b] - pred[a][b]).abs() <= tol * diag_scale + 3.0 * se[a * dim + b];
            }
        }
    }
    let drift_ok = (0..dim).all(|d| (drift[d] - p.eq.mean_velocity[d]).abs() <= 3.0 * drift_se[d] + 1e-12);
    let report = TransportReport {
        n: opts.n,
        epsilon: eps,
        dt: opts.dt,
        window: [times[0], *times.last().expect("nonempty")],
        effective_drift: drift,
        drift_std_error: drift_se,
        drift_predicted: p.eq.mean_velocity.clone(),
        effective_diffusivity: to_matrix(&d_diff, dim),
        diffusivity_std_error: to_matrix(&se, dim),
        diffusivity_ci: ci,
        diffusivity_original_time: to_matrix(&est, dim),
        diffusivity_predicted: pred.clone(),
        diffusivity_ok,
        drift_ok,
    };
    Ok((report, sys.state))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluctuationOptions {
    pub n_particles: Vec<usize>,
    pub epsilon: f64,
    /// Box extents; empty means the unit box.
    pub extents: Vec<f64>,
    pub dt: f64,
    pub burn_in: f64,
    pub t_run: f64,
    pub sample_every: f64,
    /// Modes 1..=modes along each axis.
    pub modes: usize,
    /// Block length (in samples) of the moving-block bootstrap.
    pub block: usize,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for FluctuationOptions {
    fn default() -> Self {
        FluctuationOptions {
            n_particles: vec![5_000, 10_000],
            epsilon: 0.5,
            extents: vec![],
            dt: 0.05,
            burn_in: 10.0,
            t_run: 200.0,
            sample_every: 0.1,
            modes: 4,
            block: 50,
            bootstrap: 200,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeVariance {
    pub wavevector: Vec<f64>,
    /// Time average of |ρ̂_k|², ρ̂_k = N⁻¹Σ_i e^{-ik·q_i}.
    pub variance: f64,
    pub std_error: f64,
    /// N⁻¹·kᵀσk/kᵀDk.
    pub predicted: f64,
    pub z_score: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FluctuationRun {
    pub n: usize,
    pub samples: usize,
    pub modes: Vec<ModeVariance>,
    /// Every mode within 3 standard errors of its prediction.
    pub consistent: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingCheck {
    pub wavevector: Vec<f64>,
    /// Variance at the smaller N over variance at the larger N.
    pub ratio: f64,
    pub std_error: f64,
    pub expected: f64,
    pub z_score: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FluctuationReport {
    pub epsilon: f64,
    pub runs: Vec<FluctuationRun>,
    pub scaling: Vec<ScalingCheck>,
    pub consistent: bool,
    pub scaling_ok: bool,
}

fn mode_list(extents: &[f64], modes: usize) -> Vec<(usize, usize, Vec<f64>)> {
    let dim = extents.len();
    let mut out = Vec::new();
    for d in 0..dim {
        for m in 1..=modes {
            let mut k = vec![0.0; dim];
            k[d] = 2.0 * PI * m as f64 / extents[d];
            out.push((d, m, k));
        }
    }
    out
}

/// |ρ̂_k|² for axis-aligned modes, using powers of the fundamental phase.
fn mode_powers(positions: &[f64], dim: usize, extents: &[f64], modes: usize) -> Vec<f64> {
    let n = positions.len() / dim;
    let mut out = Vec::with_capacity(dim * modes);
    for d in 0..dim {
        let sums: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .fold(
                || vec![(0.0, 0.0); modes],
                |mut acc, i| {
                    let ph = -2.0 * PI * positions[i * dim + d] / extents[d];
                    let (s1, c1) = ph.sin_cos();
                    let (mut c, mut s) = (c1, s1);
                    for a in acc.iter_mut() {
                        a.0 += c;
                        a.1 += s;
                        let nc = c * c1 - s * s1;
                        s = s * c1 + c * s1;
                        c = nc;
                    }
                    acc
                },
            )
            .reduce(
                || vec![(0.0, 0.0); modes],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        x.0 += y.0;
                        x.1 += y.1;
                    }
                    a
                },
            );
        for (re, im) in sums {
            out.push((re * re + im * im) / (n as f64 * n as f64));
        }
    }
    out
}

/// Stationary variances of the empirical density modes compared with N⁻¹·kᵀσk/kᵀDk.
pub fn fluctuation_spectrum(p: &Problem, opts: &FluctuationOptions) -> Result<FluctuationReport> {
    let mut spec = p.model.spec.clone();
    spec.epsilon = opts.epsilon;
    let dim = spec.dim();
    let extents = unit_box(&opts.extents, dim);
    if opts.n_particles.is_empty() || opts.modes == 0 {
        return Err(Error::InsufficientSamples("need at least one particle count and one mode".into()));
    }
    let modes = mode_list(&extents, opts.modes);
    let sigma = &p.coeffs.sigma;
    let dmat = &p.coeffs.dmat;
    let ratio = |k: &[f64]| -> f64 {
        let q = |m: &Matrix| -> f64 { (0..dim).map(|a| (0..dim).map(|b| k[a] * m[a][b] * k[b]).sum::<f64>()).sum() };
        q(sigma) / q(dmat)
    };
    let mut runs = Vec::new();
    for (r, &n) in opts.n_particles.iter().enumerate() {
        let mut sys = ParticleSystem::new(&spec, &extents, n, opts.seed.wrapping_add(r as u64), &InitialAngles::Density(p.eq.g.clone()))?;
        sys.check_dt(opts.dt)?;
        sys.run(opts.burn_in, opts.dt)?;
        let per_sample = (opts.sample_every / opts.dt).round().max(1.0) as usize;
        let n_samples = (opts.t_run / (per_sample as f64 * opts.dt)).round() as usize;
        let mut series = vec![Vec::with_capacity(n_samples); modes.len()];
        for _ in 0..n_samples {
            for _ in 0..per_sample {
                sys.step(opts.dt);
            }
            for (s, v) in series.iter_mut().zip(mode_powers(&sys.state.positions, dim, &extents, opts.modes)) {
                s.push(v);
            }
        }
        if n_samples < 2 * opts.block.max(1) {
            return Err(Error::InsufficientSamples(format!("{n_samples} samples for block length {}", opts.block)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xf1c7);
        rng.set_stream(r as u64);
        let mv: Vec<ModeVariance> = modes
            .iter()
            .zip(&series)
            .map(|((_, _, k), s)| {
                let b = block_bootstrap_mean(s, opts.block, opts.bootstrap, &mut rng);
                let predicted = ratio(k) / n as f64;
                ModeVariance {
                    wavevector: k.clone(),
                    variance: b.estimate,
                    std_error: b.std_error,
                    predicted,
                    z_score: (b.estimate - predicted) / b.std_error.max(1e-300),
                }
            })
            .collect();
        let consistent = mv.iter().all(|m| m.z_score.abs() <= 3.0);
        runs.push(FluctuationRun { n, samples: n_samples, modes: mv, consistent });
    }
    let mut scaling = Vec::new();
    if runs.len() >= 2 {
        let (small, large) = (&runs[0], &runs[runs.len() - 1]);
        for (a, b) in small.modes.iter().zip(&large.modes) {
            let r = a.variance / b.variance;
            let se = r * ((a.std_error / a.variance).powi(2) + (b.std_error / b.variance).powi(2)).sqrt();
            let expected = large.n as f64 / small.n as f64;
            scaling.push(ScalingCheck { wavevector: a.wavevector.clone(), ratio: r, std_error: se, expected, z_score: (r - expected) / se.max(1e-300) });
        }
    }
    let consistent = runs.iter().all(|r| r.consistent);
    let scaling_ok = scaling.iter().all(|s| s.z_score.abs() <= 3.0);
    Ok(FluctuationReport { epsilon: opts.epsilon, runs, scaling, consistent, scaling_ok })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KsReport {
    pub samples: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// Circular Brownian motion started at θ = 0, compared with the uniform law at time `t`.
pub fn uniform_angle_ks(n: usize, t: f64, dt: f64, seed: u64) -> Result<KsReport> {
    let mut spec = ModelSpec::free_abp(1);
    spec.epsilon = 0.0;
    let mut sys = ParticleSystem::new(&spec, &[1.0], n, seed, &InitialAngles::Fixed(0.0))?;
    sys.run(t, dt)?;
    let d = ks_statistic(&sys.state.angles, |x| ((x + PI) / (2.0 * PI)).clamp(0.0, 1.0));
    Ok(KsReport { samples: n, statistic: d, p_value: ks_pvalue(d, n) })
}

/// Two particles with U = cos θ and W = ½cos(θ-θ') at ε = 0, R = ∞: the marginal law of θ₁
/// over independent replicas against ∝ ∫exp(-U(θ) - U(θ') - ½W(θ,θ'))dθ'.
pub fn two_particle_gibbs_ks(replicas: usize, t: f64, dt: f64, seed: u64) -> Result<KsReport> {
    let mut spec = ModelSpec::free_abp(1);
    spec.potential = TrigSeries::cos_mode(1, 1.0);
    spec.pair = PairPotential::cos_difference(1, 0.5);
    spec.coupling = 1.0;
    spec.epsilon = 0.0;
    let samples: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut sys = ParticleSystem::new(&spec, &[1.0], 2, seed.wrapping_add(r as u64), &InitialAngles::Uniform)?;
            sys.run(t, dt)?;
            Ok(sys.state.angles[0])
        })
        .collect::<Result<Vec<_>>>()?;
    // marginal density on a fine grid, cumulative by the trapezoid rule
    let k = 4096;
    let h = 2.0 * PI / k as f64;
    let nodes: Vec<f64> = (0..=k).map(|j| -PI + h * j as f64).collect();
    let dens: Vec<f64> = nodes
        .iter()
        .map(|&a| {
            (0..k)
                .map(|j| {
                    let b = -PI + h * j as f64;
                    (-a.cos() - b.cos() - 0.25 * (a - b).cos()).exp()
                })
                .sum::<f64>()
                * h
        })
        .collect();
    let mut cdf = vec![0.0; k + 1];
    for j in 1..=k {
        cdf[j] = cdf[j - 1] + 0.5 * h * (dens[j - 1] + dens[j]);
    }
    let total = cdf[k];
    let f = |x: f64| {
        let pos = ((x + PI) / h).clamp(0.0, k as f64);
        let j = (pos.floor() as usize).min(k - 1);
        let w = pos - j as f64;
        ((1.0 - w) * cdf[j] + w * cdf[j + 1]) / total
    };
    let d = ks_statistic(&samples, f);
    Ok(KsReport { samples: replicas, statistic: d, p_value: ks_pvalue(d, replicas) })
}
