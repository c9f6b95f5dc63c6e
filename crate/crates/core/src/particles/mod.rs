//! N-particle simulation of the slow-fast system
//!
//! dθ_i = [-Γ∂_θ(U - log Γ) - Γ(θ_i)·(1/𝒩_i)Σ_{j∈𝒱_i} F(θ_i,θ_j)] dt + √(2Γ(θ_i)) dW_i,
//! dq_i = εV(θ_i) dt,
//!
//! with 𝒱_i the particles within distance R of q_i (self included) on the periodic box.

pub mod cells;
pub mod estimators;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{trig_basis, ModelSpec};

pub use estimators::*;

use std::f64::consts::PI;

/// Below this many particles a step runs serially.
const PAR_MIN: usize = 512;

/// Wraps an angle into (-π, π].
pub fn wrap_angle(t: f64) -> f64 {
    let w = (t + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// How the initial angles are drawn.
#[derive(Clone, Debug)]
pub enum InitialAngles {
    Uniform,
    Fixed(f64),
    /// Density sampled on equispaced nodes starting at -π.
    Density(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct ParticleState {
    /// Wrapped positions, N×n row-major.
    pub positions: Vec<f64>,
    /// Unwrapped displacement since the start, N×n.
    pub displacement: Vec<f64>,
    pub angles: Vec<f64>,
    pub time: f64,
    pub steps: u64,
}

/// Particle system with one counter-based random stream per particle, so that serial and
/// parallel runs draw identical increments.
#[derive(Clone, Debug)]
pub struct ParticleSystem {
    pub spec: ModelSpec,
    pub extents: Vec<f64>,
    pub seed: u64,
    pub state: ParticleState,
    rngs: Vec<ChaCha8Rng>,
    coeffs: Vec<f64>,
    basis_len: usize,
    degree: usize,
    interacting: bool,
}

fn sample_density(values: &[f64], u: f64) -> f64 {
    let m = values.len();
    let h = 2.0 * PI / m as f64;
    let total: f64 = values.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (j, &v) in values.iter().enumerate() {
        if acc + v >= target && v > 0.0 {
            let frac = (target - acc) / v;
            return wrap_angle(-PI + h * (j as f64 - 0.5 + frac));
        }
        acc += v;
    }
    PI
}

impl ParticleSystem {
    pub fn new(spec: &ModelSpec, extents: &[f64], n: usize, seed: u64, init: &InitialAngles) -> Result<Self> {
        let dim = spec.dim();
        if extents.len() != dim {
            return Err(Error::DimensionMismatch(format!("box has {} axes but the velocity has {dim}", extents.len())));
        }
        if extents.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::config("particles.box", "extents must be positive"));
        }
        if n == 0 {
            return Err(Error::config("particles.n", "need at least one particle"));
        }
        if !(spec.radius > 0.0) {
            return Err(Error::model("model.radius", "must be positive"));
        }
        if !(spec.epsilon >= 0.0 && spec.epsilon.is_finite()) {
            return Err(Error::model("model.epsilon", "must be finite and >= 0"));
        }
        if (0..512).map(|j| spec.gamma.eval(-PI + 2.0 * PI * j as f64 / 512.0)).any(|g| !(g > 0.0)) {
            return Err(Error::model("model.gamma", "mobility must be positive"));
        }
        let base = ChaCha8Rng::seed_from_u64(seed);
        let mut rngs: Vec<ChaCha8Rng> = (0..n)
            .map(|i| {
                let mut r = base.clone();
                r.set_stream(i as u64);
                r
            })
            .collect();
        let mut positions = Vec::with_capacity(n * dim);
        let mut angles = Vec::with_capacity(n);
        for r in rngs.iter_mut() {
            for l in extents {
                positions.push(r.random::<f64>() * l);
            }
            let u: f64 = r.random();
            angles.push(match init {
                InitialAngles::Uniform => wrap_angle(-PI + 2.0 * PI * u),
                InitialAngles::Fixed(t) => wrap_angle(*t),
                InitialAngles::Density(v) => sample_density(v, u),
            });
        }
        let b = spec.pair.basis_len();
        let coeffs: Vec<f64> = spec.pair.coefficients.iter().flatten().copied().collect();
        let interacting = spec.coupling != 0.0 && !spec.pair.is_zero();
        Ok(ParticleSystem {
            spec: spec.clone(),
            extents: extents.to_vec(),
            seed,
            state: ParticleState { positions, displacement: vec![0.0; n * dim], angles, time: 0.0, steps: 0 },
            rngs,
            coeffs,
            basis_len: b,
            degree: spec.pair.degree(),
            interacting,
        })
    }

    pub fn len(&self) -> usize {
        self.state.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.angles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Largest admissible step: 0.1·min(1/‖Γ∂²(U - log Γ)‖∞, R/(ε‖V‖∞)).
    pub fn dt_max(&self) -> f64 {
        let k = 1024;
        let mut curv: f64 = 0.0;
        let mut vmax: f64 = 0.0;
        for j in 0..k {
            let t = -PI + 2.0 * PI * j as f64 / k as f64;
            curv = curv.max(self.spec.effective_curvature(t).abs());
            let v2: f64 = self.spec.velocity.iter().map(|s| s.eval(t).powi(2)).sum();
            vmax = vmax.max(v2.sqrt());
        }
        let a = if curv > 0.0 { 1.0 / curv } else { f64::INFINITY };
        let b = if self.spec.epsilon * vmax > 0.0 { self.spec.radius / (self.spec.epsilon * vmax) } else { f64::INFINITY };
        0.1 * a.min(b)
    }

    /// Mean-field force term Γ(θ_i)·(1/𝒩_i)Σ_j F(θ_i,θ_j) for every particle, and 𝒩_i.
    pub fn interaction_terms(&self) -> (Vec<f64>, Vec<usize>) {
        let n = self.len();
        if !self.interacting {
            let counts = if self.spec.radius.is_finite() {
                cells::neighbor_means(&self.state.positions, self.dim(), &self.extents, self.spec.radius, &vec![0.0; n], 1).1
            } else {
                vec![n; n]
            };
            return (vec![0.0; n], counts);
        }
        let b = self.basis_len;
        let basis = |t: f64| {
            let (mut e, mut de) = (vec![0.0; b], vec![0.0; b]);
            trig_basis(self.degree, t, &mut e, &mut de);
            (e, de)
        };
        let feats: Vec<f64> = if n < PAR_MIN {
            self.state.angles.iter().flat_map(|&t| basis(t).0).collect()
        } else {
            self.state.angles.par_iter().flat_map_iter(|&t| basis(t).0).collect()
        };
        let (means, counts) = cells::neighbor_means(&self.state.positions, self.dim(), &self.extents, self.spec.radius, &feats, b);
        let force_of = |i: usize| {
            let t = self.state.angles[i];
            let de = basis(t).1;
            let m = &means[i * b..(i + 1) * b];
            let mut f = 0.0;
            for a in 0..b {
                let ca: f64 = (0..b).map(|c| self.coeffs[a * b + c] * m[c]).sum();
                f += de[a] * ca;
            }
            self.spec.gamma.eval(t) * self.spec.coupling * f
        };
        let force: Vec<f64> = if n < PAR_MIN { (0..n).map(force_of).collect() } else { (0..n).into_par_iter().map(force_of).collect() };
        (force, counts)
    }

    /// Deterministic angular drift of particle i given its interaction term.
    fn drift(&self, t: f64, interaction: f64) -> f64 {
        let g = self.spec.gamma.eval(t);
        let du = self.spec.potential.deriv(t) - self.spec.tilt;
        -g * du + self.spec.gamma.deriv(t) - interaction
    }

    /// One synchronous Euler-Maruyama step.
    pub fn step(&mut self, dt: f64) {
        let dim = self.dim();
        let eps = self.spec.epsilon;
        let inter = if self.interacting { self.interaction_terms().0 } else { vec![0.0; self.len()] };
        let mut rngs = std::mem::take(&mut self.rngs);
        let this = &*self;
        let update = |((&t, rng), &fi): ((&f64, &mut ChaCha8Rng), &f64)| {
            let xi: f64 = rng.sample(StandardNormal);
            let g = this.spec.gamma.eval(t);
            let nt = t + this.drift(t, fi) * dt + (2.0 * g * dt).sqrt() * xi;
            let mut dq = [0.0; 2];
            for (d, v) in this.spec.velocity.iter().enumerate() {
                dq[d] = eps * v.eval(t) * dt;
            }
            (nt, dq)
        };
        let updates: Vec<(f64, [f64; 2])> = if this.len() < PAR_MIN {
            this.state.angles.iter().zip(rngs.iter_mut()).zip(inter.iter()).map(update).collect()
        } else {
            this.state.angles.par_iter().zip(rngs.par_iter_mut()).zip(inter.par_iter()).map(update).collect()
        };
        self.rngs = rngs;
        let st = &mut self.state;
        for (i, (nt, dq)) in updates.into_iter().enumerate() {
            st.angles[i] = wrap_angle(nt);
            for d in 0..dim {
                let k = i * dim + d;
                st.displacement[k] += dq[d];
                st.positions[k] = (st.positions[k] + dq[d]).rem_euclid(self.extents[d]);
            }
        }
        st.time += dt;
        st.steps += 1;
    }

    /// Advances by `duration` with steps no larger than `dt`.
    pub fn run(&mut self, duration: f64, dt: f64) -> Result<()> {
        self.check_dt(dt)?;
        let steps = (duration / dt).round() as usize;
        for _ in 0..steps {
            self.step(dt);
        }
        Ok(())
    }

    pub fn check_dt(&self, dt: f64) -> Result<()> {
        let dt_max = self.dt_max();
        if !(dt > 0.0) || dt > dt_max {
            return Err(Error::StepTooLarge { dt, dt_max });
        }
        Ok(())
    }

    /// Restarts the displacement counters (e.g. after burn-in).
    pub fn reset_displacement(&mut self) {
        self.state.displacement.iter_mut().for_each(|x| *x = 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_angle(0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn density_sampler_respects_support() {
        let mut v = vec![0.0; 16];
        v[8] = 1.0;
        for u in [0.01, 0.5, 0.99] {
            let t = sample_density(&v, u);
            assert!(t.abs() <= PI / 16.0 + 1e-12, "{t}");
        }
    }
}
