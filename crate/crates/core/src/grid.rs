//! Uniform periodic grids for the angle θ ∈ (-π, π] and for the spatial box,
//! with spectral differentiation, quadrature and Poisson solves.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Default relative tolerance for mean-zero preconditions.
pub const TOL_MEAN: f64 = 1e-10;
/// Default relative residual accepted from the spatial Poisson solver.
pub const TOL_LIN: f64 = 1e-10;
/// Smallest eigenvalue accepted for a Poisson weight.
pub const EPS_SPD: f64 = 1e-12;

#[derive(Clone)]
struct FftPair {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FftPair {
    fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPair { fwd: planner.plan_fft_forward(len), inv: planner.plan_fft_inverse(len) }
    }
}

/// Signed wavenumber of FFT index `j` on `m` points; the Nyquist index maps to `m/2`.
pub fn signed_index(j: usize, m: usize) -> i64 {
    if j <= m / 2 {
        j as i64
    } else {
        j as i64 - m as i64
    }
}

/// Uniform grid θ_j = -π + 2πj/M on the circle.
#[derive(Clone)]
pub struct AngularGrid {
    m: usize,
    nodes: Vec<f64>,
    weight: f64,
    fft: FftPair,
}

impl fmt::Debug for AngularGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AngularGrid").field("m", &self.m).finish()
    }
}

impl AngularGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 16 || !m.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!("angular node count must be even and >= 16, got {m}")));
        }
        let nodes = (0..m).map(|j| -PI + 2.0 * PI * j as f64 / m as f64).collect();
        Ok(AngularGrid { m, nodes, weight: 2.0 * PI / m as f64, fft: FftPair::new(m) })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Samples a function at the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&t| f(t)).collect()
    }

    /// Trapezoidal quadrature over the circle (spectrally accurate).
    pub fn quad(&self, g: &[f64]) -> f64 {
        self.weight * g.iter().sum::<f64>()
    }

    /// ∫ a b dθ.
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weight * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    /// Trigonometric interpolant of `g` at an arbitrary angle (Nyquist mode dropped).
    pub fn interpolate(&self, g: &[f64], theta: f64) -> f64 {
        let m = self.m;
        let c = self.forward(g);
        let x = theta + PI;
        let mut v = c[0].re;
        for k in 1..m / 2 {
            let (s, co) = (k as f64 * x).sin_cos();
            v += 2.0 * (c[k].re * co - c[k].im * s);
        }
        v / m as f64
    }

    /// Unnormalized DFT coefficients ĝ_k = Σ_j g_j e^{-ik(θ_j+π)}.
    pub fn forward(&self, g: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = g.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.fwd.process(&mut buf);
        buf
    }

    /// Inverse of [`forward`](Self::forward), returning the real part.
    pub fn inverse(&self, mut coef: Vec<Complex64>) -> Vec<f64> {
        self.fft.inv.process(&mut coef);
        let scale = 1.0 / self.m as f64;
        coef.iter().map(|c| c.re * scale).collect()
    }

    /// Spectral derivative; the Nyquist mode is differentiated to zero.
    pub fn d_theta(&self, g: &[f64]) -> Vec<f64> {
        let mut c = self.forward(g);
        let m = self.m;
        for (j, cj) in c.iter_mut().enumerate() {
            let k = signed_index(j, m);
            if j == m / 2 {
                *cj = Complex64::new(0.0, 0.0);
            } else {
                *cj *= Complex64::new(0.0, k as f64);
            }
        }
        self.inverse(c)
    }

    /// Mean-zero periodic antiderivative of a mean-zero field.
    ///
    /// The Nyquist component of `g` has no periodic antiderivative on the grid and is dropped.
    pub fn antiderivative(&self, g: &[f64], tol_mean: f64) -> Result<Vec<f64>> {
        let mass = self.quad(g);
        let scale = self.weight * g.iter().map(|x| x.abs()).sum::<f64>();
        if mass.abs() > tol_mean * scale {
            return Err(Error::NonZeroMean { mean: mass / (2.0 * PI), tol: tol_mean });
        }
        let mut c = self.forward(g);
        let m = self.m;
        for (j, cj) in c.iter_mut().enumerate() {
            if j == 0 || j == m / 2 {
                *cj = Complex64::new(0.0, 0.0);
            } else {
                *cj /= Complex64::new(0.0, signed_index(j, m) as f64);
            }
        }
        Ok(self.inverse(c))
    }

    /// Fourier collocation differentiation matrix D_jk = ½(-1)^{j-k} cot((θ_j-θ_k)/2).
    pub fn diff_matrix(&self) -> DMatrix<f64> {
        let m = self.m;
        DMatrix::from_fn(m, m, |j, k| {
            if j == k {
                0.0
            } else {
                let sign = if (j + m - k).is_multiple_of(2) { 1.0 } else { -1.0 };
                0.5 * sign / ((self.nodes[j] - self.nodes[k]) / 2.0).tan()
            }
        })
    }

    /// Orthonormal (in the Euclidean sense) real Fourier vectors spanning every mode except Nyquist.
    /// Columns: constant, then cos kθ, sin kθ for k = 1..M/2-1.
    pub fn resolved_basis(&self) -> DMatrix<f64> {
        let m = self.m;
        let mut b = DMatrix::zeros(m, m - 1);
        let c0 = 1.0 / (m as f64).sqrt();
        let ck = (2.0 / m as f64).sqrt();
        for j in 0..m {
            let t = self.nodes[j];
            b[(j, 0)] = c0;
            for k in 1..m / 2 {
                b[(j, 2 * k - 1)] = ck * (k as f64 * t).cos();
                b[(j, 2 * k)] = ck * (k as f64 * t).sin();
            }
        }
        b
    }
}

/// Field of symmetric n×n matrices on a spatial grid, stored node by node (row-major blocks).
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField {
    pub n: usize,
    pub data: Vec<f64>,
}

impl TensorField {
    /// Constant matrix `mat` (row-major, n×n) at every node.
    pub fn constant(n: usize, nodes: usize, mat: &[f64]) -> Self {
        assert_eq!(mat.len(), n * n);
        let mut data = Vec::with_capacity(nodes * n * n);
        for _ in 0..nodes {
            data.extend_from_slice(mat);
        }
        TensorField { n, data }
    }

    /// Pointwise product of a scalar field with a constant matrix.
    pub fn scaled(n: usize, scalar: &[f64], mat: &[f64]) -> Self {
        assert_eq!(mat.len(), n * n);
        let mut data = Vec::with_capacity(scalar.len() * n * n);
        for &s in scalar {
            data.extend(mat.iter().map(|&x| s * x));
        }
        TensorField { n, data }
    }

    pub fn nodes(&self) -> usize {
        self.data.len() / (self.n * self.n)
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let s = self.n * self.n;
        &self.data[node * s..(node + 1) * s]
    }

    pub fn scale(&self, s: f64) -> Self {
        TensorField { n: self.n, data: self.data.iter().map(|x| x * s).collect() }
    }

    /// Smallest eigenvalue over all nodes, with the node where it occurs.
    pub fn min_eigenvalue(&self) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for i in 0..self.nodes() {
            let a = self.at(i);
            let e = match self.n {
                1 => a[0],
                2 => {
                    let tr = a[0] + a[3];
                    let det = a[0] * a[3] - a[1] * a[2];
                    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
                    0.5 * tr - disc
                }
                _ => unreachable!("dimension checked by SpatialGrid"),
            };
            if e < best.1 {
                best = (i, e);
            }
        }
        best
    }
}

/// Result of a weighted Poisson solve.
#[derive(Clone, Debug)]
pub struct PoissonSolution {
    pub phi: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Uniform periodic tensor grid in a box of dimension 1 or 2, stored row-major.
#[derive(Clone)]
pub struct SpatialGrid {
    extents: Vec<f64>,
    counts: Vec<usize>,
    ffts: Vec<FftPair>,
}

impl fmt::Debug for SpatialGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpatialGrid").field("extents", &self.extents).field("counts", &self.counts).finish()
    }
}

impl SpatialGrid {
    pub fn new(extents: &[f64], counts: &[usize]) -> Result<Self> {
        let n = extents.len();
        if !(1..=2).contains(&n) || counts.len() != n {
            return Err(Error::InvalidGrid(format!("spatial dimension must be 1 or 2, got {n}")));
        }
        if extents.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidGrid("box extents must be positive".into()));
        }
        if counts.iter().any(|&k| k < 4 || k % 2 != 0) {
            return Err(Error::InvalidGrid("spatial node counts must be even and >= 4".into()));
        }
        let ffts = counts.iter().map(|&k| FftPair::new(k)).collect();
        Ok(SpatialGrid { extents: extents.to_vec(), counts: counts.to_vec(), ffts })
    }

    /// Square/segment box of side `l` with `k` nodes per axis.
    pub fn cube(n: usize, l: f64, k: usize) -> Result<Self> {
        Self::new(&vec![l; n], &vec![k; n])
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.volume() / self.len() as f64
    }

    /// Per-axis indices of a flat node index.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.dim() == 1 {
            [idx, 0]
        } else {
            [idx / self.counts[1], idx % self.counts[1]]
        }
    }

    /// Coordinates of node `idx` (box starts at the origin).
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let mi = self.multi_index(idx);
        let mut x = [0.0; 2];
        for d in 0..self.dim() {
            x[d] = self.extents[d] * mi[d] as f64 / self.counts[d] as f64;
        }
        x
    }

    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.coords(i)[..self.dim()])).collect()
    }

    pub fn quad(&self, f: &[f64]) -> f64 {
        self.cell_volume() * f.iter().sum::<f64>()
    }

    pub fn mean(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() / self.len() as f64
    }

    /// Angular wavenumber along axis `d` of FFT index `j`, and whether it is the Nyquist index.
    fn wavenumber(&self, d: usize, j: usize) -> (f64, bool) {
        let k = self.counts[d];
        let s = signed_index(j, k);
        (2.0 * PI * s as f64 / self.extents[d], j == k / 2)
    }

    /// Wavevector of a flat Fourier index with per-axis Nyquist flags.
    pub fn wavevector(&self, idx: usize) -> ([f64; 2], [bool; 2]) {
        let mi = self.multi_index(idx);
        let mut k = [0.0; 2];
        let mut nyq = [false; 2];
        for d in 0..self.dim() {
            let (kd, nd) = self.wavenumber(d, mi[d]);
            k[d] = kd;
            nyq[d] = nd;
        }
        (k, nyq)
    }

    /// Fourier modes annihilated by the spectral gradient: every axis index is 0 or Nyquist.
    pub fn is_null_mode(&self, idx: usize) -> bool {
        let mi = self.multi_index(idx);
        (0..self.dim()).all(|d| mi[d] == 0 || mi[d] == self.counts[d] / 2)
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let pick = |p: &FftPair| if inverse { p.inv.clone() } else { p.fwd.clone() };
        if self.dim() == 1 {
            pick(&self.ffts[0]).process(buf);
            return;
        }
        let (k0, k1) = (self.counts[0], self.counts[1]);
        let row = pick(&self.ffts[1]);
        for r in buf.chunks_mut(k1) {
            row.process(r);
        }
        let col = pick(&self.ffts[0]);
        let mut tmp = vec![Complex64::new(0.0, 0.0); k0];
        for c in 0..k1 {
            for r in 0..k0 {
                tmp[r] = buf[r * k1 + c];
            }
            col.process(&mut tmp);
            for r in 0..k0 {
                buf[r * k1 + c] = tmp[r];
            }
        }
    }

    /// Unnormalized forward DFT of a real field.
    pub fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Inverse DFT returning the real part (normalized).
    pub fn inverse(&self, mut coef: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut coef, true);
        let s = 1.0 / self.len() as f64;
        coef.iter().map(|c| c.re * s).collect()
    }

    /// In-place complex inverse transform with normalization.
    pub fn inverse_complex(&self, coef: &mut [Complex64]) {
        self.transform(coef, true);
        let s = 1.0 / self.len() as f64;
        for c in coef.iter_mut() {
            *c *= s;
        }
    }

    /// In-place complex forward transform.
    pub fn forward_complex(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    fn partial_hat(&self, hat: &[Complex64], d: usize) -> Vec<Complex64> {
        hat.iter()
            .enumerate()
            .map(|(i, &c)| {
                let (k, nyq) = self.wavevector(i);
                if nyq[d] {
                    Complex64::new(0.0, 0.0)
                } else {
                    c * Complex64::new(0.0, k[d])
                }
            })
            .collect()
    }

    /// Spectral gradient, one component per axis.
    pub fn grad(&self, f: &[f64]) -> Vec<Vec<f64>> {
        let hat = self.forward(f);
        (0..self.dim()).map(|d| self.inverse(self.partial_hat(&hat, d))).collect()
    }

    /// Spectral derivative along one axis.
    pub fn partial(&self, f: &[f64], d: usize) -> Vec<f64> {
        let hat = self.forward(f);
        self.inverse(self.partial_hat(&hat, d))
    }

    /// Spectral divergence of a vector field given by components.
    pub fn div(&self, c: &[Vec<f64>]) -> Vec<f64> {
        assert_eq!(c.len(), self.dim());
        let mut out = vec![0.0; self.len()];
        for (d, cd) in c.iter().enumerate() {
            let p = self.partial(cd, d);
            for (o, x) in out.iter_mut().zip(p) {
                *o += x;
            }
        }
        out
    }

    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        self.div(&self.grad(f))
    }

    /// Removes the modes killed by the gradient (constant and Nyquist combinations).
    pub fn project_null_modes(&self, f: &[f64]) -> Vec<f64> {
        let mut hat = self.forward(f);
        for (i, c) in hat.iter_mut().enumerate() {
            if self.is_null_mode(i) {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        self.inverse(hat)
    }

    /// Applies χ to a vector field given by components.
    pub fn apply_tensor(&self, chi: &TensorField, v: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut out = vec![vec![0.0; self.len()]; n];
        for i in 0..self.len() {
            let a = chi.at(i);
            for d in 0..n {
                out[d][i] = (0..n).map(|e| a[d * n + e] * v[e][i]).sum();
            }
        }
        out
    }

    /// -∇·(χ∇φ).
    pub fn weighted_operator(&self, chi: &TensorField, phi: &[f64]) -> Vec<f64> {
        let flux = self.apply_tensor(chi, &self.grad(phi));
        self.div(&flux).into_iter().map(|x| -x).collect()
    }

    /// Solves ∇·(χ∇φ) = -rhs for mean-zero φ by preconditioned conjugate gradients.
    ///
    /// The preconditioner inverts the constant-coefficient operator with the mean of χ.
    pub fn solve_weighted_poisson(
        &self,
        chi: &TensorField,
        rhs: &[f64],
        tol_mean: f64,
        tol_lin: f64,
    ) -> Result<PoissonSolution> {
        let n = self.dim();
        if chi.n != n || chi.nodes() != self.len() || rhs.len() != self.len() {
            return Err(Error::DimensionMismatch("poisson weight or right-hand side".into()));
        }
        let (node, min_eig) = chi.min_eigenvalue();
        if min_eig < EPS_SPD {
            return Err(Error::SingularWeight { node, min_eig });
        }
        let mass = self.quad(rhs);
        let scale = self.cell_volume() * rhs.iter().map(|x| x.abs()).sum::<f64>();
        if mass.abs() > tol_mean * scale {
            return Err(Error::NonZeroMean { mean: mass / self.volume(), tol: tol_mean });
        }
        let b = self.project_null_modes(rhs);
        let bnorm = norm2(&b);
        if bnorm == 0.0 {
            return Ok(PoissonSolution { phi: vec![0.0; self.len()], residual: 0.0, iterations: 0 });
        }
        let mut mean_chi = vec![0.0; n * n];
        for i in 0..self.len() {
            for (m, a) in mean_chi.iter_mut().zip(chi.at(i)) {
                *m += a / self.len() as f64;
            }
        }
        let symbol: Vec<f64> = (0..self.len())
            .map(|i| {
                if self.is_null_mode(i) {
                    return 0.0;
                }
                let (k, nyq) = self.wavevector(i);
                let kk: Vec<f64> = (0..n).map(|d| if nyq[d] { 0.0 } else { k[d] }).collect();
                let mut s = 0.0;
                for d in 0..n {
                    for e in 0..n {
                        s += kk[d] * mean_chi[d * n + e] * kk[e];
                    }
                }
                if s > 0.0 {
                    1.0 / s
                } else {
                    0.0
                }
            })
            .collect();
        let precond = |r: &[f64]| -> Vec<f64> {
            let mut hat = self.forward(r);
            for (c, s) in hat.iter_mut().zip(&symbol) {
                *c *= *s;
            }
            self.inverse(hat)
        };

        let target = (tol_lin * 1e-3).max(1e-15);
        let mut x = vec![0.0; self.len()];
        let mut r = b.clone();
        let mut z = precond(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let max_iter = 20 * self.len().max(50);
        let mut iterations = 0;
        while iterations < max_iter {
            if norm2(&r) <= target * bnorm {
                break;
            }
            let ap = self.weighted_operator(chi, &p);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for i in 0..x.len() {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            z = precond(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..p.len() {
                p[i] = z[i] + beta * p[i];
            }
            iterations += 1;
        }
        let x = self.project_null_modes(&x);
        let ax = self.weighted_operator(chi, &x);
        let res: Vec<f64> = ax.iter().zip(&b).map(|(a, c)| a - c).collect();
        let residual = norm2(&res) / bnorm;
        if residual > tol_lin {
            return Err(Error::LinearSolve { residual });
        }
        Ok(PoissonSolution { phi: x, residual, iterations })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Field on the product of a spatial grid and an angular grid: `nq` fibers of `m` angular values.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseField {
    pub nq: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl PhaseField {
    pub fn zeros(nq: usize, m: usize) -> Self {
        PhaseField { nq, m, data: vec![0.0; nq * m] }
    }

    /// ρ(q) G(θ).
    pub fn product(rho: &[f64], g: &[f64]) -> Self {
        let mut data = Vec::with_capacity(rho.len() * g.len());
        for &r in rho {
            data.extend(g.iter().map(|&x| r * x));
        }
        PhaseField { nq: rho.len(), m: g.len(), data }
    }

    pub fn fiber(&self, q: usize) -> &[f64] {
        &self.data[q * self.m..(q + 1) * self.m]
    }

    pub fn fiber_mut(&mut self, q: usize) -> &mut [f64] {
        let m = self.m;
        &mut self.data[q * m..(q + 1) * m]
    }

    /// Values at a fixed angle index, as a spatial field.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nq).map(|q| self.data[q * self.m + j]).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[f64]) {
        for (q, &v) in col.iter().enumerate() {
            self.data[q * self.m + j] = v;
        }
    }

    /// Angular mass ∫ f dθ at every spatial node.
    pub fn marginal(&self, grid: &AngularGrid) -> Vec<f64> {
        (0..self.nq).map(|q| grid.quad(self.fiber(q))).collect()
    }

    /// ∫∫ f dq dθ.
    pub fn total_mass(&self, space: &SpatialGrid, grid: &AngularGrid) -> f64 {
        space.quad(&self.marginal(grid))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn sup(&self) -> f64 {
        sup_norm(&self.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_or_small_grids() {
        assert!(AngularGrid::new(15).is_err());
        assert!(AngularGrid::new(8).is_err());
        assert!(AngularGrid::new(16).is_ok());
    }

    #[test]
    fn interpolation_is_exact_for_resolved_modes() {
        let g = AngularGrid::new(32).unwrap();
        let f = |t: f64| 0.3 + (3.0 * t).cos() - 0.5 * t.sin();
        let v = g.sample(f);
        for t in [-3.0, -0.123, 0.77, 2.9] {
            assert!((g.interpolate(&v, t) - f(t)).abs() < 1e-13);
        }
    }

    #[test]
    fn quadrature_of_one_is_two_pi() {
        let g = AngularGrid::new(64).unwrap();
        assert!((g.quad(&vec![1.0; 64]) - 2.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn derivative_of_trig_functions() {
        let g = AngularGrid::new(64).unwrap();
        let d = g.d_theta(&g.sample(f64::sin));
        let want = g.sample(f64::cos);
        assert!(d.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
        let d3 = g.d_theta(&g.sample(|t| (3.0 * t).cos()));
        let want3 = g.sample(|t| -3.0 * (3.0 * t).sin());
        assert!(d3.iter().zip(&want3).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(sup_norm(&g.d_theta(&vec![1.0; 64])) < 1e-14);
    }

    #[test]
    fn matrix_and_fft_derivatives_agree() {
        let g = AngularGrid::new(32).unwrap();
        let f = g.sample(|t| (t.cos()).exp() + (2.0 * t).sin());
        let d = g.diff_matrix() * nalgebra::DVector::from_vec(f.clone());
        let e = g.d_theta(&f);
        for (a, b) in d.iter().zip(&e) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn antiderivative_cases() {
        let g = AngularGrid::new(64).unwrap();
        let c = g.antiderivative(&g.sample(f64::cos), TOL_MEAN).unwrap();
        let want = g.sample(f64::sin);
        assert!(c.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(sup_norm(&g.antiderivative(&vec![0.0; 64], TOL_MEAN).unwrap()) == 0.0);
        assert!(matches!(g.antiderivative(&vec![1.0; 64], TOL_MEAN), Err(Error::NonZeroMean { .. })));
    }

    #[test]
    fn spatial_derivatives_1d() {
        let l = 3.0;
        let s = SpatialGrid::new(&[l], &[64]).unwrap();
        let k = 2.0 * PI / l;
        let f = s.sample(|x| (k * x[0]).sin());
        let gr = s.grad(&f);
        let want = s.sample(|x| k * (k * x[0]).cos());
        assert!(gr[0].iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
        let lap = s.laplacian(&f);
        assert!(lap.iter().zip(&f).all(|(a, b)| (a + k * k * b).abs() < 1e-11));
        assert!((s.quad(&vec![1.0; 64]) - l).abs() < 1e-14);
    }

    #[test]
    fn poisson_single_mode() {
        let l = 2.0;
        let s = SpatialGrid::new(&[l], &[64]).unwrap();
        let k = 2.0 * PI / l;
        let rhs = s.sample(|x| k * k * (k * x[0]).sin());
        let chi = TensorField::constant(1, 64, &[1.0]);
        let sol = s.solve_weighted_poisson(&chi, &rhs, TOL_MEAN, TOL_LIN).unwrap();
        let want = s.sample(|x| (k * x[0]).sin());
        assert!(sol.phi.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-10));
        let sol2 = s.solve_weighted_poisson(&chi.scale(2.0), &rhs, TOL_MEAN, TOL_LIN).unwrap();
        assert!(sol2.phi.iter().zip(&want).all(|(a, b)| (2.0 * a - b).abs() < 1e-10));
        let zero = s.solve_weighted_poisson(&chi, &vec![0.0; 64], TOL_MEAN, TOL_LIN).unwrap();
        assert!(zero.phi.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn poisson_rejects_bad_inputs() {
        let s = SpatialGrid::new(&[1.0], &[16]).unwrap();
        let chi = TensorField::constant(1, 16, &[1.0]);
        assert!(matches!(
            s.solve_weighted_poisson(&chi, &[1.0; 16], TOL_MEAN, TOL_LIN),
            Err(Error::NonZeroMean { .. })
        ));
        let bad = TensorField::constant(1, 16, &[-1.0]);
        let rhs = s.sample(|x| (2.0 * PI * x[0]).sin());
        assert!(matches!(
            s.solve_weighted_poisson(&bad, &rhs, TOL_MEAN, TOL_LIN),
            Err(Error::SingularWeight { .. })
        ));
    }

    #[test]
    fn poisson_variable_weight_2d() {
        let s = SpatialGrid::new(&[1.0, 2.0], &[16, 16]).unwrap();
        let rho = s.sample(|x| 1.0 + 0.5 * (2.0 * PI * x[0]).cos() * (PI * x[1]).sin());
        let chi = TensorField::scaled(2, &rho, &[1.0, 0.2, 0.2, 0.7]);
        let rhs = s.sample(|x| (2.0 * PI * x[0]).sin() + (PI * x[1]).cos() * (2.0 * PI * x[0]).cos());
        let sol = s.solve_weighted_poisson(&chi, &rhs, TOL_MEAN, TOL_LIN).unwrap();
        let back = s.weighted_operator(&chi, &sol.phi);
        let err: f64 = back.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "residual {err}");
    }
}
