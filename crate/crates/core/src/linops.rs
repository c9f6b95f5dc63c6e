//! Kinetic operators: the nonlinear angular operator D_f, the centered transport T_0, the
//! linearization L_G at the local equilibrium and its adjoint, and the dissipativity margin.
//!
//! Matrices act on samples at the angular nodes. The collocation derivative D annihilates the
//! Nyquist mode, so every range lies in the non-Nyquist subspace; linear solves are carried out
//! there (see [`LinearizedOps::solve_forward`]).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumState;
use crate::error::{Error, Result};
use crate::grid::{sup_norm, PhaseField, SpatialGrid};
use crate::model::SampledModel;

/// Local mass below which D_f is undefined.
pub const EPS_MASS: f64 = 1e-14;
/// Relative cutoff for singular values treated as zero.
pub const SVD_CUTOFF: f64 = 1e-10;

/// D_f(f) on one fiber: ∂_θ(Γ[∂_θU + F(f)/Π(f)] f + Γ ∂_θ f).
pub fn apply_d_f_fiber(model: &SampledModel, f: &[f64]) -> Result<Vec<f64>> {
    let mass = model.grid.quad(f);
    if !(mass > EPS_MASS) {
        return Err(Error::VacuousDensity { node: 0, mass });
    }
    let df = model.grid.d_theta(f);
    let conv = if model.has_interaction() { model.convolve_f(f) } else { vec![0.0; f.len()] };
    let flux: Vec<f64> = (0..f.len())
        .map(|j| model.gamma[j] * ((model.du[j] + conv[j] / mass) * f[j] + df[j]))
        .collect();
    Ok(model.grid.d_theta(&flux))
}

/// D_f(f) at every spatial node.
pub fn apply_d_f(model: &SampledModel, f: &PhaseField) -> Result<PhaseField> {
    let mut out = PhaseField::zeros(f.nq, f.m);
    for q in 0..f.nq {
        let r = apply_d_f_fiber(model, f.fiber(q)).map_err(|e| match e {
            Error::VacuousDensity { mass, .. } => Error::VacuousDensity { node: q, mass },
            other => other,
        })?;
        out.fiber_mut(q).copy_from_slice(&r);
    }
    Ok(out)
}

/// Centered transport T_0 g = V̄(θ)·∇_q g.
pub fn apply_t0(space: &SpatialGrid, eq: &EquilibriumState, g: &PhaseField) -> PhaseField {
    let mut out = PhaseField::zeros(g.nq, g.m);
    for j in 0..g.m {
        let col = g.column(j);
        let grad = space.grad(&col);
        let mut acc = vec![0.0; g.nq];
        for (d, gd) in grad.iter().enumerate() {
            let vb = eq.vbar[d][j];
            for (a, x) in acc.iter_mut().zip(gd) {
                *a += vb * x;
            }
        }
        out.set_column(j, &acc);
    }
    out
}

/// Checked identities of the assembled operators.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorIdentities {
    /// sup|L G|.
    pub l_of_g: f64,
    /// sup|L† 1|.
    pub ladj_of_one: f64,
    /// Largest relative gap between ∫h L g and ∫(L† h) g over random fields.
    pub adjoint_gap: f64,
    /// Largest entry of Π_G L.
    pub projected_l: f64,
    /// Largest entry of Π_G² - Π_G.
    pub projector_defect: f64,
    pub l_norm: f64,
}

/// Pseudo-inverse of an operator restricted to the non-Nyquist subspace.
#[derive(Clone, Debug)]
struct ReducedSolver {
    u: DMatrix<f64>,
    s_inv: DVector<f64>,
    v: DMatrix<f64>,
    kernel_dim: usize,
}

impl ReducedSolver {
    fn new(reduced: DMatrix<f64>) -> Self {
        let svd = reduced.svd(true, true);
        let smax = svd.singular_values.max();
        let mut kernel_dim = 0;
        let s_inv = svd.singular_values.map(|s| {
            if s > SVD_CUTOFF * smax {
                1.0 / s
            } else {
                kernel_dim += 1;
                0.0
            }
        });
        ReducedSolver {
            u: svd.u.expect("requested U"),
            s_inv,
            v: svd.v_t.expect("requested V^T").transpose(),
            kernel_dim,
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let t = self.u.transpose() * rhs;
        let t = t.component_mul(&self.s_inv);
        &self.v * t
    }
}

/// Linearized operator L_G, its adjoint, and derived quantities.
#[derive(Clone, Debug)]
pub struct LinearizedOps {
    pub l: DMatrix<f64>,
    pub ladj: DMatrix<f64>,
    pub g: Vec<f64>,
    pub weight: f64,
    pub kappa_margin: f64,
    /// Kernel dimensions on the non-Nyquist subspace.
    pub kernel_dim_l: usize,
    pub kernel_dim_ladj: usize,
    pub identities: OperatorIdentities,
    basis: DMatrix<f64>,
    forward: ReducedSolver,
    adjoint: ReducedSolver,
}

/// Result of a cell-problem solve.
#[derive(Clone, Debug)]
pub struct Solve {
    pub x: Vec<f64>,
    /// sup|A x - b| / max(sup|b|, 1).
    pub residual: f64,
}

impl LinearizedOps {
    /// Π_G g = (∫g) G.
    pub fn pi_g(&self, g: &[f64]) -> Vec<f64> {
        let mass = self.weight * g.iter().sum::<f64>();
        self.g.iter().map(|x| mass * x).collect()
    }

    /// g - (∫g) G.
    pub fn mean_projector(&self, g: &[f64]) -> Vec<f64> {
        let p = self.pi_g(g);
        g.iter().zip(&p).map(|(a, b)| a - b).collect()
    }

    pub fn apply_l(&self, g: &[f64]) -> Vec<f64> {
        (&self.l * DVector::from_column_slice(g)).as_slice().to_vec()
    }

    pub fn apply_ladj(&self, g: &[f64]) -> Vec<f64> {
        (&self.ladj * DVector::from_column_slice(g)).as_slice().to_vec()
    }

    /// Solves L x = b with ∫x = 0. Requires ∫b = 0.
    pub fn solve_forward(&self, b: &[f64], what: &str) -> Result<Solve> {
        let mass = self.weight * b.iter().sum::<f64>();
        let scale = self.weight * b.iter().map(|x| x.abs()).sum::<f64>();
        if mass.abs() > 1e-9 * scale.max(1e-6) {
            return Err(Error::Unsolvable { what: what.into(), defect: mass });
        }
        let rb = self.basis.transpose() * DVector::from_column_slice(b);
        let y = self.forward.solve(&rb);
        let mut x: Vec<f64> = (&self.basis * y).as_slice().to_vec();
        let mx = self.weight * x.iter().sum::<f64>();
        for (xi, gi) in x.iter_mut().zip(&self.g) {
            *xi -= mx * gi;
        }
        let r = self.apply_l(&x);
        let residual = sup_norm(&r.iter().zip(b).map(|(a, c)| a - c).collect::<Vec<_>>()) / sup_norm(b).max(1.0);
        Ok(Solve { x, residual })
    }

    /// Solves L† x = b with ⟨x⟩_G = 0. Requires ⟨b, G⟩ = 0.
    pub fn solve_adjoint(&self, b: &[f64], what: &str) -> Result<Solve> {
        let mass = self.weight * b.iter().zip(&self.g).map(|(x, g)| x * g).sum::<f64>();
        let scale = self.weight * b.iter().zip(&self.g).map(|(x, g)| (x * g).abs()).sum::<f64>();
        if mass.abs() > 1e-9 * scale.max(1e-6) {
            return Err(Error::Unsolvable { what: what.into(), defect: mass });
        }
        let rb = self.basis.transpose() * DVector::from_column_slice(b);
        let y = self.adjoint.solve(&rb);
        let mut x: Vec<f64> = (&self.basis * y).as_slice().to_vec();
        let mx = self.weight * x.iter().zip(&self.g).map(|(x, g)| x * g).sum::<f64>();
        for xi in x.iter_mut() {
            *xi -= mx;
        }
        let r = self.apply_ladj(&x);
        let residual = sup_norm(&r.iter().zip(b).map(|(a, c)| a - c).collect::<Vec<_>>()) / sup_norm(b).max(1.0);
        Ok(Solve { x, residual })
    }
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

/// Assembles L_G and L_G† at the equilibrium `eq`.
///
/// L g = ∂(Γ[∂U + F(G)] g + Γ∂g) + ∂(ΓG[F(g) - (∫g) F(G)]),
/// L† φ = -Γ[∂U + F(G)]∂φ + ∂(Γ∂φ) - F*(GΓ∂φ) + ∫F(G)GΓ∂φ.
pub fn assemble_linearized(model: &SampledModel, eq: &EquilibriumState) -> Result<LinearizedOps> {
    let m = model.m();
    let w = model.grid.weight();
    let d = model.grid.diff_matrix();
    let g = &eq.g;
    let fg = model.convolve_f(g);
    let a: Vec<f64> = model.du.iter().zip(&fg).map(|(u, f)| u + f).collect();
    let gam = &model.gamma;
    let gamma_g: Vec<f64> = gam.iter().zip(g).map(|(x, y)| x * y).collect();
    let ones = DVector::from_element(m, 1.0);
    let fg_v = DVector::from_column_slice(&fg);

    let interaction = &model.fmat * w - &fg_v * ones.transpose() * w;
    let l = &d * diag(gam) * (diag(&a) + &d) + &d * diag(&gamma_g) * interaction;

    let gamma_a: Vec<f64> = gam.iter().zip(&a).map(|(x, y)| x * y).collect();
    let fgg: Vec<f64> = (0..m).map(|j| fg[j] * gamma_g[j] * w).collect();
    let ladj = -diag(&gamma_a) * &d + &d * diag(gam) * &d - model.fmat.transpose() * diag(&gamma_g) * &d * w
        + &ones * DVector::from_column_slice(&fgg).transpose() * &d;

    let basis = model.grid.resolved_basis();
    let forward = ReducedSolver::new(basis.transpose() * &l * &basis);
    let adjoint = ReducedSolver::new(basis.transpose() * &ladj * &basis);

    let identities = check_identities(&l, &ladj, g, w);
    let mut ops = LinearizedOps {
        kernel_dim_l: forward.kernel_dim,
        kernel_dim_ladj: adjoint.kernel_dim,
        l,
        ladj,
        g: g.clone(),
        weight: w,
        kappa_margin: f64::NAN,
        identities,
        basis,
        forward,
        adjoint,
    };
    ops.kappa_margin = dissipativity_margin(model, &ops)?;
    Ok(ops)
}

fn check_identities(l: &DMatrix<f64>, ladj: &DMatrix<f64>, g: &[f64], w: f64) -> OperatorIdentities {
    let m = g.len();
    let gv = DVector::from_column_slice(g);
    let l_of_g = (l * &gv).amax();
    let ladj_of_one = (ladj * DVector::from_element(m, 1.0)).amax();
    let pi = &gv * DVector::from_element(m, w).transpose();
    let projected_l = (&pi * l).amax();
    let projector_defect = (&pi * &pi - &pi).amax();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut adjoint_gap: f64 = 0.0;
    for _ in 0..8 {
        let x = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        let lhs = w * y.dot(&(l * &x));
        let rhs = w * (ladj * &y).dot(&x);
        let scale = w * y.norm() * (l * &x).norm();
        adjoint_gap = adjoint_gap.max((lhs - rhs).abs() / scale.max(1e-300));
    }
    OperatorIdentities { l_of_g, ladj_of_one, adjoint_gap, projected_l, projector_defect, l_norm: l.norm() }
}

/// Largest κ with -∫G⁻¹(Lg)g ≥ κ ∫GΓ[∂(g/G)]² over zero-mass g = G(h - ⟨h⟩_G), where h ranges
/// over trigonometric polynomials of degree ≤ M/4 (products with G stay resolved on the grid).
pub fn dissipativity_margin(model: &SampledModel, ops: &LinearizedOps) -> Result<f64> {
    let m = model.m();
    let kmax = m / 4;
    let nodes = model.grid.nodes();
    let w = ops.weight;
    let g = &ops.g;
    let nb = 2 * kmax;
    let mut h = DMatrix::zeros(m, nb);
    let mut dh = DMatrix::zeros(m, nb);
    for k in 1..=kmax {
        let kf = k as f64;
        for j in 0..m {
            let (s, c) = (kf * nodes[j]).sin_cos();
            h[(j, 2 * k - 2)] = c;
            h[(j, 2 * k - 1)] = s;
            dh[(j, 2 * k - 2)] = -kf * s;
            dh[(j, 2 * k - 1)] = kf * c;
        }
    }
    let mut gm = DMatrix::zeros(m, nb);
    for i in 0..nb {
        let mean: f64 = (0..m).map(|j| g[j] * h[(j, i)]).sum::<f64>() * w;
        for j in 0..m {
            gm[(j, i)] = g[j] * (h[(j, i)] - mean);
        }
    }
    let lg = &ops.l * &gm;
    let ginv: Vec<f64> = g.iter().map(|x| 1.0 / x).collect();
    let q = -(gm.transpose() * diag(&ginv) * lg) * w;
    let s = (&q + q.transpose()) * 0.5;
    let wts: Vec<f64> = g.iter().zip(&model.gamma).map(|(a, b)| a * b * w).collect();
    let b = dh.transpose() * diag(&wts) * &dh;
    let chol = b.cholesky().ok_or(Error::DegenerateDirichletForm)?;
    let lmat = chol.l();
    let linv = lmat.clone().try_inverse().ok_or(Error::DegenerateDirichletForm)?;
    let c = &linv * s * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    Ok(eig.eigenvalues.min())
}

/// sup|(D_{G+δg}(G+δg) - D_G(G))/δ - L g|: finite-difference check of the linearization.
pub fn linearization_defect(model: &SampledModel, eq: &EquilibriumState, ops: &LinearizedOps, g: &[f64], delta: f64) -> Result<f64> {
    let base = apply_d_f_fiber(model, &eq.g)?;
    let pert: Vec<f64> = eq.g.iter().zip(g).map(|(a, b)| a + delta * b).collect();
    let moved = apply_d_f_fiber(model, &pert)?;
    let lg = ops.apply_l(g);
    Ok(sup_norm(&(0..g.len()).map(|j| (moved[j] - base[j]) / delta - lg[j]).collect::<Vec<_>>()))
}

/// Eigenvalues of L restricted to the non-Nyquist subspace, sorted by decreasing real part.
pub fn resolved_spectrum(ops: &LinearizedOps) -> Vec<(f64, f64)> {
    let red = ops.basis.transpose() * &ops.l * &ops.basis;
    let ev = red.complex_eigenvalues();
    let mut out: Vec<(f64, f64)> = ev.iter().map(|c| (c.re, c.im)).collect();
    out.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_equilibrium, EquilibriumOptions};
    use crate::grid::AngularGrid;
    use crate::model::ModelSpec;

    fn setup(spec: ModelSpec, m: usize) -> (SampledModel, EquilibriumState, LinearizedOps) {
        let model = SampledModel::new(&spec, &AngularGrid::new(m).unwrap()).unwrap();
        let eq = solve_equilibrium(&model, &EquilibriumOptions::default()).unwrap();
        let ops = assemble_linearized(&model, &eq).unwrap();
        (model, eq, ops)
    }

    #[test]
    fn free_abp_spectrum_is_laplacian() {
        let (_, _, ops) = setup(ModelSpec::free_abp(1), 32);
        let spec = resolved_spectrum(&ops);
        let want = [0.0, -1.0, -1.0, -4.0, -4.0, -9.0, -9.0];
        for (e, w) in spec.iter().zip(want) {
            assert!((e.0 - w).abs() < 1e-8 && e.1.abs() < 1e-8, "{e:?} vs {w}");
        }
        assert!((ops.kappa_margin - 1.0).abs() < 1e-8);
        assert_eq!(ops.kernel_dim_l, 1);
        assert_eq!(ops.kernel_dim_ladj, 1);
    }

    #[test]
    fn identities_hold_with_interaction() {
        let (model, eq, ops) = setup(ModelSpec::active_2d(0.2), 64);
        let id = &ops.identities;
        assert!(id.l_of_g < 1e-8, "{id:?}");
        assert!(id.ladj_of_one < 1e-8);
        assert!(id.adjoint_gap < 1e-9);
        assert!(id.projected_l < 1e-10);
        assert!(ops.kappa_margin > 0.0);
        let g: Vec<f64> = model.grid.sample(|t| (2.0 * t).cos() + 0.3 * t.sin());
        let d1 = linearization_defect(&model, &eq, &ops, &g, 1e-4).unwrap();
        let d2 = linearization_defect(&model, &eq, &ops, &g, 5e-5).unwrap();
        assert!(d2 < 0.6 * d1 && d1 < 1e-2, "{d1} {d2}");
    }

    #[test]
    fn d_f_vanishes_on_local_equilibria() {
        let (model, eq, _) = setup(ModelSpec::von_mises(1), 64);
        let f = PhaseField::product(&[0.5, 1.0, 2.0], &eq.g);
        let out = apply_d_f(&model, &f).unwrap();
        assert!(out.sup() < 1e-10);
        let empty = PhaseField::zeros(2, 64);
        assert!(matches!(apply_d_f(&model, &empty), Err(Error::VacuousDensity { node: 0, .. })));
    }

    #[test]
    fn solvability_requires_zero_mass() {
        let (model, _, ops) = setup(ModelSpec::von_mises(1), 64);
        let b: Vec<f64> = model.grid.sample(|t| (t.sin() + 1.0).exp());
        assert!(matches!(ops.solve_forward(&b, "test"), Err(Error::Unsolvable { .. })));
        let bp = ops.mean_projector(&b);
        let s = ops.solve_forward(&bp, "test").unwrap();
        assert!(s.residual < 1e-9);
        assert!(ops.weight * s.x.iter().sum::<f64>() < 1e-12);
    }

    #[test]
    fn transport_is_antisymmetric() {
        let (model, eq, _) = setup(ModelSpec::von_mises(1), 32);
        let space = SpatialGrid::new(&[2.0], &[8]).unwrap();
        let mk = |a: f64| {
            let mut f = PhaseField::zeros(8, 32);
            for q in 0..8 {
                let x = space.coords(q)[0];
                for (j, t) in model.grid.nodes().iter().enumerate() {
                    f.data[q * 32 + j] = (a * x + t).sin() + (t * 2.0 - x).cos();
                }
            }
            f
        };
        let (g, h) = (mk(std::f64::consts::PI), mk(2.0 * std::f64::consts::PI));
        let tg = apply_t0(&space, &eq, &g);
        let th = apply_t0(&space, &eq, &h);
        let ip = |a: &PhaseField, b: &PhaseField| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>();
        let (x, y) = (ip(&h, &tg), ip(&g, &th));
        assert!((x + y).abs() < 1e-9 * x.abs().max(1.0));
    }
}
