//! Cell problems and transport coefficients.
//!
//! ψ solves L†ψ = -V̄, ω solves L(Gω) = -GV̄, ξ solves L(Gξ) = ∂(ΓG∂ψ) and the flux potential
//! is ΓG∂ψ. From these: diffusivity D, mobility σ and the auxiliary matrices E and R.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumState;
use crate::error::{Error, Result};
use crate::grid::TOL_MEAN;
use crate::linops::LinearizedOps;
use crate::model::SampledModel;

/// Residual accepted for cell-problem solves.
pub const TOL_CELL: f64 = 1e-8;

pub type Matrix = Vec<Vec<f64>>;

pub fn to_dmatrix(a: &Matrix) -> DMatrix<f64> {
    let n = a.len();
    DMatrix::from_fn(n, n, |i, j| a[i][j])
}

pub fn from_dmatrix(a: &DMatrix<f64>) -> Matrix {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect()).collect()
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CellResiduals {
    pub psi: f64,
    pub omega: f64,
    pub xi: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub psi: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    pub flux_potential: Vec<Vec<f64>>,
    /// Diffusivity (symmetrized).
    pub dmat: Matrix,
    /// ⟨ψ_k, V̄_l⟩_G before symmetrization.
    pub dmat_raw: Matrix,
    /// Mobility.
    pub sigma: Matrix,
    pub emat: Matrix,
    pub rmat: Matrix,
    pub residuals: CellResiduals,
    /// max |⟨ψ_k, V̄_l⟩_G - ⟨V̄_k, ω_l⟩_G|.
    pub duality_gap: f64,
}

fn check(s: &crate::linops::Solve, what: &str) -> Result<()> {
    if s.residual > TOL_CELL {
        return Err(Error::Unsolvable { what: what.into(), defect: s.residual });
    }
    Ok(())
}

/// ψ_k with L†ψ_k = -V̄_k and ⟨ψ_k⟩_G = 0.
pub fn solve_psi(eq: &EquilibriumState, ops: &LinearizedOps) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut out = Vec::new();
    let mut res: f64 = 0.0;
    for vb in &eq.vbar {
        let b: Vec<f64> = vb.iter().map(|x| -x).collect();
        let s = ops.solve_adjoint(&b, "psi")?;
        check(&s, "psi")?;
        res = res.max(s.residual);
        out.push(s.x);
    }
    Ok((out, res))
}

/// ω_k with L(Gω_k) = -GV̄_k and ⟨ω_k⟩_G = 0.
pub fn solve_omega(eq: &EquilibriumState, ops: &LinearizedOps) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut out = Vec::new();
    let mut res: f64 = 0.0;
    for vb in &eq.vbar {
        let b: Vec<f64> = vb.iter().zip(&eq.g).map(|(v, g)| -v * g).collect();
        let s = ops.solve_forward(&b, "omega")?;
        check(&s, "omega")?;
        res = res.max(s.residual);
        out.push(s.x.iter().zip(&eq.g).map(|(y, g)| y / g).collect());
    }
    Ok((out, res))
}

/// ΓG∂_θψ.
pub fn canonical_flux(model: &SampledModel, eq: &EquilibriumState, psi: &[f64]) -> Vec<f64> {
    let dpsi = model.grid.d_theta(psi);
    (0..psi.len()).map(|j| model.gamma[j] * eq.g[j] * dpsi[j]).collect()
}

/// Canonical ξ_k (L(Gξ_k) = ∂(ΓG∂ψ_k), ⟨ξ_k⟩_G = 0) and flux potentials ΓG∂ψ_k.
pub fn solve_xi_canonical(
    model: &SampledModel,
    eq: &EquilibriumState,
    ops: &LinearizedOps,
    psi: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, f64)> {
    let mut xi = Vec::new();
    let mut flux = Vec::new();
    let mut res: f64 = 0.0;
    for p in psi {
        let fl = canonical_flux(model, eq, p);
        let b = model.grid.d_theta(&fl);
        let s = ops.solve_forward(&b, "xi")?;
        check(&s, "xi")?;
        res = res.max(s.residual);
        xi.push(s.x.iter().zip(&eq.g).map(|(y, g)| y / g).collect());
        flux.push(fl);
    }
    Ok((xi, flux, res))
}

/// Flux potential of an arbitrary ξ: antiderivative of L(Gξ) with ∫ flux/(ΓG) = 0.
pub fn flux_for_xi(model: &SampledModel, eq: &EquilibriumState, ops: &LinearizedOps, xi: &[f64]) -> Result<Vec<f64>> {
    let gx: Vec<f64> = xi.iter().zip(&eq.g).map(|(x, g)| x * g).collect();
    let b = ops.apply_l(&gx);
    let mut fl = model.grid.antiderivative(&b, 1e-8)?;
    let inv: Vec<f64> = model.gamma.iter().zip(&eq.g).map(|(a, b)| 1.0 / (a * b)).collect();
    let c = -model.grid.dot(&fl, &inv) / model.grid.quad(&inv);
    fl.iter_mut().for_each(|x| *x += c);
    Ok(fl)
}

/// D_kl = ½(⟨ψ_k,V̄_l⟩_G + ⟨ψ_l,V̄_k⟩_G) and the unsymmetrized matrix.
pub fn diffusivity(model: &SampledModel, eq: &EquilibriumState, psi: &[Vec<f64>]) -> (Matrix, Matrix) {
    let n = psi.len();
    let raw: Matrix = (0..n).map(|k| (0..n).map(|l| eq.inner(model, &psi[k], &eq.vbar[l])).collect()).collect();
    let sym = (0..n).map(|k| (0..n).map(|l| 0.5 * (raw[k][l] + raw[l][k])).collect()).collect();
    (sym, raw)
}

/// σ_kl = ⟨∂ψ_k, Γ∂ψ_l⟩_G.
pub fn mobility(model: &SampledModel, eq: &EquilibriumState, psi: &[Vec<f64>]) -> Matrix {
    let dpsi: Vec<Vec<f64>> = psi.iter().map(|p| model.grid.d_theta(p)).collect();
    let n = psi.len();
    (0..n)
        .map(|k| {
            (0..n)
                .map(|l| {
                    let prod: Vec<f64> = (0..model.m()).map(|j| model.gamma[j] * dpsi[l][j]).collect();
                    eq.inner(model, &dpsi[k], &prod)
                })
                .collect()
        })
        .collect()
}

/// E_kl = ⟨V̄_k, ξ_l⟩_G.
pub fn e_matrix(model: &SampledModel, eq: &EquilibriumState, xi: &[Vec<f64>]) -> Matrix {
    let n = xi.len();
    (0..n).map(|k| (0..n).map(|l| eq.inner(model, &eq.vbar[k], &xi[l])).collect()).collect()
}

/// R_kl = ⟨flux_k/G, flux_l/(ΓG)⟩_G = ∫ flux_k flux_l / (ΓG).
pub fn r_matrix(model: &SampledModel, eq: &EquilibriumState, flux: &[Vec<f64>]) -> Matrix {
    let n = flux.len();
    let inv: Vec<f64> = model.gamma.iter().zip(&eq.g).map(|(a, b)| 1.0 / (a * b)).collect();
    (0..n)
        .map(|k| {
            (0..n)
                .map(|l| {
                    let prod: Vec<f64> = (0..model.m()).map(|j| flux[l][j] * inv[j]).collect();
                    model.grid.dot(&flux[k], &prod)
                })
                .collect()
        })
        .collect()
}

/// Solves all cell problems and assembles the coefficient matrices.
pub fn compute_coefficients(model: &SampledModel, eq: &EquilibriumState, ops: &LinearizedOps) -> Result<CoefficientSet> {
    let (psi, rp) = solve_psi(eq, ops)?;
    let (omega, ro) = solve_omega(eq, ops)?;
    let (xi, flux, rx) = solve_xi_canonical(model, eq, ops, &psi)?;
    Ok(assemble_matrices(model, eq, psi, omega, xi, flux, CellResiduals { psi: rp, omega: ro, xi: rx }))
}

pub fn assemble_matrices(
    model: &SampledModel,
    eq: &EquilibriumState,
    psi: Vec<Vec<f64>>,
    omega: Vec<Vec<f64>>,
    xi: Vec<Vec<f64>>,
    flux: Vec<Vec<f64>>,
    residuals: CellResiduals,
) -> CoefficientSet {
    let (dmat, dmat_raw) = diffusivity(model, eq, &psi);
    let sigma = mobility(model, eq, &psi);
    let emat = e_matrix(model, eq, &xi);
    let rmat = r_matrix(model, eq, &flux);
    let n = psi.len();
    let mut duality_gap: f64 = 0.0;
    for k in 0..n {
        for l in 0..n {
            let b = eq.inner(model, &eq.vbar[k], &omega[l]);
            duality_gap = duality_gap.max((dmat_raw[k][l] - b).abs());
        }
    }
    CoefficientSet { psi, omega, xi, flux_potential: flux, dmat, dmat_raw, sigma, emat, rmat, residuals, duality_gap }
}

impl CoefficientSet {
    pub fn dim(&self) -> usize {
        self.dmat.len()
    }

    pub fn dmat(&self) -> DMatrix<f64> {
        to_dmatrix(&self.dmat)
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        to_dmatrix(&self.sigma)
    }

    pub fn emat(&self) -> DMatrix<f64> {
        to_dmatrix(&self.emat)
    }

    pub fn rmat(&self) -> DMatrix<f64> {
        to_dmatrix(&self.rmat)
    }
}

/// Symmetric pseudo-inverse with relative spectral cutoff.
pub fn pinv_sym(a: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((a + a.transpose()) * 0.5);
    let scale = eig.eigenvalues.amax();
    let inv = eig.eigenvalues.map(|l| if l.abs() > rel_cutoff * scale && scale > 0.0 { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Smallest eigenvalue of σ - E R⁺ Eᵀ.
pub fn schur_gap(sigma: &DMatrix<f64>, e: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let s = sigma - e * pinv_sym(r, 1e-12) * e.transpose();
    SymmetricEigen::new((&s + s.transpose()) * 0.5).eigenvalues.min()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchurReport {
    /// Smallest gap over the random trials.
    pub min_eig_gap: f64,
    pub trial_gaps: Vec<f64>,
    /// Gap at the canonical ξ (zero in exact arithmetic).
    pub canonical_gap: f64,
    /// ‖E - R‖_F + ‖R - σ‖_F at the canonical ξ.
    pub equality_residual: f64,
    /// Gap at ξ = 0 (equals the smallest eigenvalue of σ).
    pub zero_xi_gap: f64,
}

/// Random mean-zero ξ: degree-8 trigonometric polynomial with standard normal coefficients.
pub fn random_xi(model: &SampledModel, eq: &EquilibriumState, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let deg = 8;
    let c: Vec<f64> = (0..2 * deg + 1).map(|_| StandardNormal.sample(rng)).collect();
    let x: Vec<f64> = model
        .grid
        .nodes()
        .iter()
        .map(|&t| {
            c[0] + (1..=deg)
                .map(|k| {
                    let kt = k as f64 * t;
                    c[2 * k - 1] * kt.cos() + c[2 * k] * kt.sin()
                })
                .sum::<f64>()
        })
        .collect();
    let mean = eq.average(model, &x);
    x.iter().map(|v| v - mean).collect()
}

/// Checks σ - E R⁺ Eᵀ ⪰ 0 over random admissible ξ.
pub fn schur_sweep(
    model: &SampledModel,
    eq: &EquilibriumState,
    ops: &LinearizedOps,
    coeffs: &CoefficientSet,
    trials: usize,
    seed: u64,
) -> Result<SchurReport> {
    let n = coeffs.dim();
    let sigma = coeffs.sigma();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trial_gaps = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut xi = Vec::new();
        let mut flux = Vec::new();
        for _ in 0..n {
            let x = random_xi(model, eq, &mut rng);
            flux.push(flux_for_xi(model, eq, ops, &x)?);
            xi.push(x);
        }
        let e = to_dmatrix(&e_matrix(model, eq, &xi));
        let r = to_dmatrix(&r_matrix(model, eq, &flux));
        trial_gaps.push(schur_gap(&sigma, &e, &r));
    }
    let min_eig_gap = trial_gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    let (e, r) = (coeffs.emat(), coeffs.rmat());
    let canonical_gap = schur_gap(&sigma, &e, &r);
    let equality_residual = (&e - &r).norm() + (&r - &sigma).norm();
    let zero = DMatrix::zeros(n, n);
    let zero_xi_gap = schur_gap(&sigma, &zero, &zero);
    Ok(SchurReport { min_eig_gap, trial_gaps, canonical_gap, equality_residual, zero_xi_gap })
}

/// D and σ recomputed after adding constants to ψ (they must not change).
pub fn shifted_coefficients(model: &SampledModel, eq: &EquilibriumState, psi: &[Vec<f64>], shifts: &[f64]) -> (Matrix, Matrix) {
    let shifted: Vec<Vec<f64>> = psi.iter().zip(shifts).map(|(p, c)| p.iter().map(|x| x + c).collect()).collect();
    (diffusivity(model, eq, &shifted).0, mobility(model, eq, &shifted))
}

/// Mean-zero check used by callers that build their own ξ.
pub fn is_admissible_xi(model: &SampledModel, eq: &EquilibriumState, xi: &[f64]) -> bool {
    eq.average(model, xi).abs() <= TOL_MEAN * eq.average(model, &xi.iter().map(|x| x.abs()).collect::<Vec<_>>()).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_equilibrium, EquilibriumOptions};
    use crate::grid::AngularGrid;
    use crate::linops::assemble_linearized;
    use crate::model::{ModelSpec, TrigSeries};

    fn all(spec: ModelSpec, m: usize) -> (SampledModel, EquilibriumState, LinearizedOps, CoefficientSet) {
        let model = SampledModel::new(&spec, &AngularGrid::new(m).unwrap()).unwrap();
        let eq = solve_equilibrium(&model, &EquilibriumOptions::default()).unwrap();
        let ops = assemble_linearized(&model, &eq).unwrap();
        let c = compute_coefficients(&model, &eq, &ops).unwrap();
        (model, eq, ops, c)
    }

    #[test]
    fn free_abp_coefficients_are_half_identity() {
        let (model, _, _, c) = all(ModelSpec::free_abp(2), 64);
        for k in 0..2 {
            for l in 0..2 {
                let want = if k == l { 0.5 } else { 0.0 };
                assert!((c.dmat[k][l] - want).abs() < 1e-10);
                assert!((c.sigma[k][l] - want).abs() < 1e-10);
            }
        }
        let cos = model.grid.sample(f64::cos);
        assert!(c.psi[0].iter().zip(&cos).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(c.omega[0].iter().zip(&cos).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn constant_velocity_gives_zero_matrices() {
        let mut spec = ModelSpec::von_mises(1);
        spec.velocity = vec![TrigSeries::constant(2.0)];
        let (_, _, _, c) = all(spec, 32);
        for m in [&c.dmat, &c.sigma, &c.emat, &c.rmat] {
            assert!(m[0][0].abs() < 1e-14);
        }
    }

    #[test]
    fn identity_chain_for_interacting_model() {
        let (model, eq, ops, c) = all(ModelSpec::active_2d(0.2), 64);
        assert!((c.emat() - c.rmat()).norm() < 1e-8);
        assert!((c.rmat() - c.sigma()).norm() < 1e-8);
        assert!(c.duality_gap < 1e-9);
        let rep = schur_sweep(&model, &eq, &ops, &c, 8, 3).unwrap();
        assert!(rep.min_eig_gap >= -1e-10, "{rep:?}");
        assert!(rep.canonical_gap.abs() < 1e-8);
        // D ≥ κσ
        let diff = c.dmat() - c.sigma() * ops.kappa_margin;
        assert!(SymmetricEigen::new(diff).eigenvalues.min() > -1e-8);
    }

    #[test]
    fn shift_invariance() {
        let (model, eq, _, c) = all(ModelSpec::von_mises(2), 64);
        let (d, s) = shifted_coefficients(&model, &eq, &c.psi, &[3.0, -1.5]);
        assert!((to_dmatrix(&d) - c.dmat()).amax() < 1e-10);
        assert!((to_dmatrix(&s) - c.sigma()).amax() < 1e-10);
    }
}
