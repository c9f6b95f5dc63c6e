//! Model description: confining potential U, pair potential W, mobility Γ, slow velocity V.
//!
//! Scalar functions of θ are trigonometric series so that particles can evaluate them at
//! arbitrary angles; the angular solvers work with their samples on an [`AngularGrid`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::AngularGrid;

/// Finite real Fourier series Σ_k a_k cos kθ + b_k sin kθ (`sin[0]` is ignored).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigSeries {
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl TrigSeries {
    pub fn constant(c: f64) -> Self {
        TrigSeries { cos: vec![c], sin: vec![] }
    }

    pub fn zero() -> Self {
        TrigSeries::default()
    }

    /// a·cos kθ.
    pub fn cos_mode(k: usize, a: f64) -> Self {
        let mut cos = vec![0.0; k + 1];
        cos[k] = a;
        TrigSeries { cos, sin: vec![] }
    }

    /// a·sin kθ.
    pub fn sin_mode(k: usize, a: f64) -> Self {
        let mut sin = vec![0.0; k + 1];
        sin[k] = a;
        TrigSeries { cos: vec![], sin }
    }

    pub fn degree(&self) -> usize {
        self.cos.len().max(self.sin.len()).saturating_sub(1)
    }

    fn coef(&self, k: usize) -> (f64, f64) {
        let a = self.cos.get(k).copied().unwrap_or(0.0);
        let b = if k == 0 { 0.0 } else { self.sin.get(k).copied().unwrap_or(0.0) };
        (a, b)
    }

    pub fn eval(&self, t: f64) -> f64 {
        (0..=self.degree())
            .map(|k| {
                let (a, b) = self.coef(k);
                let kt = k as f64 * t;
                a * kt.cos() + b * kt.sin()
            })
            .sum()
    }

    pub fn deriv(&self, t: f64) -> f64 {
        (1..=self.degree())
            .map(|k| {
                let (a, b) = self.coef(k);
                let kf = k as f64;
                kf * (b * (kf * t).cos() - a * (kf * t).sin())
            })
            .sum()
    }

    pub fn second_deriv(&self, t: f64) -> f64 {
        (1..=self.degree())
            .map(|k| {
                let (a, b) = self.coef(k);
                let kf = k as f64;
                -kf * kf * (a * (kf * t).cos() + b * (kf * t).sin())
            })
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.cos.iter().chain(self.sin.iter().skip(1)).all(|&x| x == 0.0)
    }

    /// Interpolating series of samples on a uniform grid θ_j = -π + 2πj/M (Nyquist dropped).
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let m = samples.len();
        if m < 4 || !m.is_multiple_of(2) {
            return Err(Error::model("samples", "sample count must be even and >= 4"));
        }
        let nodes: Vec<f64> = (0..m).map(|j| -PI + 2.0 * PI * j as f64 / m as f64).collect();
        let kmax = m / 2 - 1;
        let mut cos = vec![0.0; kmax + 1];
        let mut sin = vec![0.0; kmax + 1];
        for k in 0..=kmax {
            let kf = k as f64;
            let (mut a, mut b) = (0.0, 0.0);
            for (g, t) in samples.iter().zip(&nodes) {
                a += g * (kf * t).cos();
                b += g * (kf * t).sin();
            }
            let scale = if k == 0 { 1.0 / m as f64 } else { 2.0 / m as f64 };
            cos[k] = a * scale;
            sin[k] = if k == 0 { 0.0 } else { b * scale };
        }
        Ok(TrigSeries { cos, sin })
    }
}

/// Real trigonometric basis e_0 = 1, e_{2k-1} = cos kθ, e_{2k} = sin kθ, and derivatives.
pub fn trig_basis(deg: usize, t: f64, out: &mut [f64], dout: &mut [f64]) {
    out[0] = 1.0;
    dout[0] = 0.0;
    for k in 1..=deg {
        let kf = k as f64;
        let (s, c) = (kf * t).sin_cos();
        out[2 * k - 1] = c;
        out[2 * k] = s;
        dout[2 * k - 1] = -kf * s;
        dout[2 * k] = kf * c;
    }
}

/// Pair potential W(θ,θ') = Σ_ab C_ab e_a(θ) e_b(θ') in the real trigonometric basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairPotential {
    pub coefficients: Vec<Vec<f64>>,
}

impl PairPotential {
    pub fn zero() -> Self {
        PairPotential { coefficients: vec![vec![0.0]] }
    }

    /// a·cos(k(θ-θ')).
    pub fn cos_difference(k: usize, a: f64) -> Self {
        let b = 2 * k + 1;
        let mut c = vec![vec![0.0; b]; b];
        c[2 * k - 1][2 * k - 1] = a;
        c[2 * k][2 * k] = a;
        PairPotential { coefficients: c }
    }

    pub fn basis_len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn degree(&self) -> usize {
        self.basis_len().saturating_sub(1) / 2
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().flatten().all(|&x| x == 0.0)
    }

    fn check_shape(&self) -> Result<()> {
        let b = self.basis_len();
        if b.is_multiple_of(2) || self.coefficients.iter().any(|r| r.len() != b) {
            return Err(Error::model("model.pair.coefficients", "must be a square matrix of odd size 2K+1"));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64, s: f64) -> f64 {
        let b = self.basis_len();
        let deg = self.degree();
        let (mut et, mut dt) = (vec![0.0; b], vec![0.0; b]);
        let (mut es, mut ds) = (vec![0.0; b], vec![0.0; b]);
        trig_basis(deg, t, &mut et, &mut dt);
        trig_basis(deg, s, &mut es, &mut ds);
        let mut v = 0.0;
        for a in 0..b {
            for c in 0..b {
                v += self.coefficients[a][c] * et[a] * es[c];
            }
        }
        v
    }

    /// ∂_θ W(θ,θ').
    pub fn d_first(&self, t: f64, s: f64) -> f64 {
        let b = self.basis_len();
        let deg = self.degree();
        let (mut et, mut dt) = (vec![0.0; b], vec![0.0; b]);
        let (mut es, mut ds) = (vec![0.0; b], vec![0.0; b]);
        trig_basis(deg, t, &mut et, &mut dt);
        trig_basis(deg, s, &mut es, &mut ds);
        let mut v = 0.0;
        for a in 0..b {
            for c in 0..b {
                v += self.coefficients[a][c] * dt[a] * es[c];
            }
        }
        v
    }

    /// Coefficients of an M×M sample matrix W(θ_j, θ_k) (Nyquist dropped in both arguments).
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let m = samples.len();
        if m < 4 || !m.is_multiple_of(2) || samples.iter().any(|r| r.len() != m) {
            return Err(Error::model("model.pair.samples", "must be a square matrix with even size >= 4"));
        }
        let deg = m / 2 - 1;
        let b = 2 * deg + 1;
        let nodes: Vec<f64> = (0..m).map(|j| -PI + 2.0 * PI * j as f64 / m as f64).collect();
        // Dual basis coefficients: projection with weights 1/M (constant) and 2/M (others).
        let mut basis = DMatrix::zeros(b, m);
        let (mut e, mut de) = (vec![0.0; b], vec![0.0; b]);
        for (j, &t) in nodes.iter().enumerate() {
            trig_basis(deg, t, &mut e, &mut de);
            for a in 0..b {
                let w = if a == 0 { 1.0 / m as f64 } else { 2.0 / m as f64 };
                basis[(a, j)] = w * e[a];
            }
        }
        let wmat = DMatrix::from_fn(m, m, |j, k| samples[j][k]);
        let c = &basis * wmat * basis.transpose();
        Ok(PairPotential { coefficients: (0..b).map(|a| (0..b).map(|d| c[(a, d)]).collect()).collect() })
    }
}

/// The slow-fast model on the circle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Confining potential U(θ).
    pub potential: TrigSeries,
    /// Pair potential W(θ,θ'), multiplied by `coupling`.
    pub pair: PairPotential,
    /// Mobility Γ(θ) > 0.
    pub gamma: TrigSeries,
    /// Slow velocity field, one series per spatial component.
    pub velocity: Vec<TrigSeries>,
    pub coupling: f64,
    /// Constant angular force; nonzero values make the model non-equilibrium.
    pub tilt: f64,
    pub epsilon: f64,
    /// Interaction radius for the particle system (infinite means mean-field).
    #[serde(with = "crate::report::float_token")]
    pub radius: f64,
}

fn velocity(n: usize) -> Vec<TrigSeries> {
    match n {
        1 => vec![TrigSeries::cos_mode(1, 1.0)],
        _ => vec![TrigSeries::cos_mode(1, 1.0), TrigSeries::sin_mode(1, 1.0)],
    }
}

impl ModelSpec {
    /// U = 0, W = 0, Γ = 1, V = cos θ (n = 1) or (cos θ, sin θ) (n = 2).
    pub fn free_abp(n: usize) -> Self {
        ModelSpec {
            name: "free_abp".into(),
            potential: TrigSeries::zero(),
            pair: PairPotential::zero(),
            gamma: TrigSeries::constant(1.0),
            velocity: velocity(n),
            coupling: 1.0,
            tilt: 0.0,
            epsilon: 0.1,
            radius: f64::INFINITY,
        }
    }

    /// U = cos θ, W = 0, Γ = 1.
    pub fn von_mises(n: usize) -> Self {
        ModelSpec { name: "von_mises".into(), potential: TrigSeries::cos_mode(1, 1.0), ..Self::free_abp(n) }
    }

    /// V = (cos θ, sin θ), W = cos(θ-θ') scaled by `coupling`, Γ = 1, U = 0.
    pub fn active_2d(coupling: f64) -> Self {
        ModelSpec {
            name: "active_2d".into(),
            pair: PairPotential::cos_difference(1, 1.0),
            coupling,
            ..Self::free_abp(2)
        }
    }

    /// Builtin preset by name.
    pub fn builtin(name: &str, n: usize, coupling: f64) -> Result<Self> {
        let mut spec = match name {
            "free_abp" => Self::free_abp(n),
            "von_mises" => Self::von_mises(n),
            "active_2d" => {
                if n != 2 {
                    return Err(Error::config("model.n", "active_2d is two-dimensional"));
                }
                Self::active_2d(coupling)
            }
            other => return Err(Error::config("model.preset", format!("unknown preset `{other}`"))),
        };
        if name != "active_2d" {
            spec.coupling = coupling;
        }
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.velocity.len()
    }

    /// Γ ∂²_θ(U - log Γ) evaluated at θ.
    pub fn effective_curvature(&self, t: f64) -> f64 {
        let g = self.gamma.eval(t);
        let dg = self.gamma.deriv(t);
        let d2g = self.gamma.second_deriv(t);
        let d2log = d2g / g - (dg / g).powi(2);
        g * (self.potential.second_deriv(t) - d2log)
    }
}

/// A model sampled on an angular grid.
#[derive(Clone, Debug)]
pub struct SampledModel {
    pub spec: ModelSpec,
    pub grid: AngularGrid,
    pub u: Vec<f64>,
    /// ∂_θU minus the tilt.
    pub du: Vec<f64>,
    pub gamma: Vec<f64>,
    pub dgamma: Vec<f64>,
    /// V_d(θ_j), one row per spatial component.
    pub v: Vec<Vec<f64>>,
    /// Coupling times W(θ_j, θ_k).
    pub wmat: DMatrix<f64>,
    /// F(θ_j, θ_k) = coupling · ∂_θW, differentiated spectrally in the first argument.
    pub fmat: DMatrix<f64>,
    pub diagnostics: ModelDiagnostics,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelDiagnostics {
    pub gamma_min: f64,
    pub pair_asymmetry: f64,
    /// Numerical rank of the sampled ∂_θV; full rank n is the non-degeneracy condition.
    pub velocity_rank: usize,
    pub nondegenerate_velocity: bool,
    pub equilibrium_type: bool,
}

pub const GAMMA_MIN: f64 = 1e-8;

impl SampledModel {
    pub fn new(spec: &ModelSpec, grid: &AngularGrid) -> Result<Self> {
        let n = spec.dim();
        if !(1..=2).contains(&n) {
            return Err(Error::model("model.velocity", format!("spatial dimension must be 1 or 2, got {n}")));
        }
        if !(spec.epsilon >= 0.0 && spec.epsilon.is_finite()) {
            return Err(Error::model("model.epsilon", "must be finite and >= 0"));
        }
        if !spec.coupling.is_finite() || !spec.tilt.is_finite() {
            return Err(Error::model("model.coupling", "must be finite"));
        }
        if !(spec.radius > 0.0) {
            return Err(Error::model("model.radius", "must be positive"));
        }
        spec.pair.check_shape()?;
        let gamma = grid.sample(|t| spec.gamma.eval(t));
        let gamma_min = gamma.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(gamma_min >= GAMMA_MIN) {
            return Err(Error::model("model.gamma", format!("mobility must be positive, minimum is {gamma_min}")));
        }
        let dgamma = grid.sample(|t| spec.gamma.deriv(t));
        let u = grid.sample(|t| spec.potential.eval(t));
        let du = grid.sample(|t| spec.potential.deriv(t) - spec.tilt);
        let v: Vec<Vec<f64>> = spec.velocity.iter().map(|s| grid.sample(|t| s.eval(t))).collect();
        let nodes = grid.nodes();
        let m = grid.len();
        let wmat = DMatrix::from_fn(m, m, |j, k| spec.coupling * spec.pair.eval(nodes[j], nodes[k]));
        let wscale = wmat.amax().max(1.0);
        let pair_asymmetry = (&wmat - wmat.transpose()).amax() / wscale;
        if pair_asymmetry > 1e-12 {
            return Err(Error::model("model.pair", format!("pair potential is not symmetric (defect {pair_asymmetry:e})")));
        }
        let fmat = grid.diff_matrix() * &wmat;

        let dv = DMatrix::from_fn(n, m, |d, j| spec.velocity[d].deriv(nodes[j]));
        let sv = dv.singular_values();
        let smax = sv.max();
        let velocity_rank = sv.iter().filter(|&&s| s > 1e-10 * smax.max(1e-300) && s > 1e-12).count();
        let diagnostics = ModelDiagnostics {
            gamma_min,
            pair_asymmetry,
            velocity_rank,
            nondegenerate_velocity: velocity_rank == n,
            equilibrium_type: spec.tilt == 0.0,
        };
        Ok(SampledModel { spec: spec.clone(), grid: grid.clone(), u, du, gamma, dgamma, v, wmat, fmat, diagnostics })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn m(&self) -> usize {
        self.grid.len()
    }

    /// F(g)(θ_j) = ∫ F(θ_j, θ') g(θ') dθ'.
    pub fn convolve_f(&self, g: &[f64]) -> Vec<f64> {
        let gv = DVector::from_column_slice(g);
        let out = &self.fmat * gv * self.grid.weight();
        out.as_slice().to_vec()
    }

    pub fn has_interaction(&self) -> bool {
        self.fmat.amax() > 0.0
    }

    /// sup |F(θ,θ')| on the grid.
    pub fn force_sup(&self) -> f64 {
        self.fmat.amax()
    }
}

/// F(θ_j, θ_k) on the grid, coupling included.
pub fn pair_force_kernel(model: &SampledModel) -> &DMatrix<f64> {
    &model.fmat
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trig_series_derivatives() {
        let s = TrigSeries { cos: vec![0.5, 1.0, 0.0, 0.3], sin: vec![0.0, -0.2, 0.7] };
        let h = 1e-5;
        for &t in &[-2.0, 0.1, 1.3] {
            let fd = (s.eval(t + h) - s.eval(t - h)) / (2.0 * h);
            assert!((fd - s.deriv(t)).abs() < 1e-8);
            let fd2 = (s.deriv(t + h) - s.deriv(t - h)) / (2.0 * h);
            assert!((fd2 - s.second_deriv(t)).abs() < 1e-8);
        }
    }

    #[test]
    fn trig_series_from_samples_roundtrip() {
        let s = TrigSeries { cos: vec![0.5, 1.0, 0.0, 0.3], sin: vec![0.0, -0.2, 0.7] };
        let g = AngularGrid::new(16).unwrap();
        let r = TrigSeries::from_samples(&g.sample(|t| s.eval(t))).unwrap();
        for &t in &[-2.0, 0.1, 1.3] {
            assert!((r.eval(t) - s.eval(t)).abs() < 1e-13);
        }
    }

    #[test]
    fn force_kernel_of_cosine_difference() {
        let g = AngularGrid::new(32).unwrap();
        let m = SampledModel::new(&ModelSpec::active_2d(1.0), &g).unwrap();
        let nodes = g.nodes();
        for j in 0..32 {
            for k in 0..32 {
                let want = -(nodes[j] - nodes[k]).sin();
                assert!((m.fmat[(j, k)] - want).abs() < 1e-12);
            }
        }
        let m2 = SampledModel::new(&ModelSpec::active_2d(2.0), &g).unwrap();
        assert!((&m2.fmat - &m.fmat * 2.0).amax() < 1e-12);
        let z = SampledModel::new(&ModelSpec::free_abp(2), &g).unwrap();
        assert_eq!(z.fmat.amax(), 0.0);
    }

    #[test]
    fn convolution_cases() {
        let g = AngularGrid::new(64).unwrap();
        let m = SampledModel::new(&ModelSpec::active_2d(1.0), &g).unwrap();
        let uni = vec![1.0 / (2.0 * PI); 64];
        assert!(m.convolve_f(&uni).iter().all(|x| x.abs() < 1e-13));
        assert!(m.convolve_f(&vec![0.0; 64]).iter().all(|&x| x == 0.0));
        // unit mass concentrated at the node θ = 0
        let mut delta = vec![0.0; 64];
        delta[32] = 1.0 / g.weight();
        let out = m.convolve_f(&delta);
        for (o, t) in out.iter().zip(g.nodes()) {
            assert!((o + t.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_from_samples_roundtrip() {
        let g = AngularGrid::new(16).unwrap();
        let p = PairPotential::cos_difference(2, 0.7);
        let samples: Vec<Vec<f64>> =
            g.nodes().iter().map(|&a| g.nodes().iter().map(|&b| p.eval(a, b)).collect()).collect();
        let q = PairPotential::from_samples(&samples).unwrap();
        assert!((q.eval(0.3, -1.1) - 0.7 * (2.0 * 1.4_f64).cos()).abs() < 1e-12);
        assert!((q.d_first(0.3, -1.1) + 1.4 * (2.0 * 1.4_f64).sin()).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_models() {
        let g = AngularGrid::new(16).unwrap();
        let mut s = ModelSpec::free_abp(1);
        s.gamma = TrigSeries { cos: vec![0.5, 1.0], sin: vec![] };
        match SampledModel::new(&s, &g) {
            Err(Error::InvalidModel { key, .. }) => assert_eq!(key, "model.gamma"),
            other => panic!("unexpected {other:?}"),
        }
        let mut s = ModelSpec::free_abp(1);
        s.pair = PairPotential { coefficients: vec![vec![0.0, 1.0, 0.0], vec![0.0; 3], vec![0.0; 3]] };
        assert!(SampledModel::new(&s, &g).is_err());
    }

    #[test]
    fn velocity_rank_diagnostic() {
        let g = AngularGrid::new(16).unwrap();
        let m = SampledModel::new(&ModelSpec::free_abp(2), &g).unwrap();
        assert_eq!(m.diagnostics.velocity_rank, 2);
        let mut s = ModelSpec::free_abp(1);
        s.velocity = vec![TrigSeries::constant(1.0)];
        let m = SampledModel::new(&s, &g).unwrap();
        assert!(!m.diagnostics.nondegenerate_velocity);
    }
}
