//! Weighted H⁻¹ norms.
//!
//! ‖g‖²_{-1,χ} = inf { ∫ c·χ⁻¹c : ∇·c = g } = 2 sup_φ { ∫gφ - ½∫χ∇φ·∇φ }.
//! On an angular fiber the infimum is explicit; in space it requires a weighted Poisson solve.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AngularGrid, SpatialGrid, TensorField, TOL_LIN};

/// A nonnegative value that may be +∞. Infinite compares above every finite value and
/// serializes as the tagged token `{"kind":"infinite"}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RateValue {
    Finite(f64),
    Infinite,
}

impl RateValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, RateValue::Finite(_))
    }

    /// The value as f64 (f64::INFINITY for Infinite).
    pub fn as_f64(&self) -> f64 {
        match self {
            RateValue::Finite(v) => *v,
            RateValue::Infinite => f64::INFINITY,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            RateValue::Finite(v) => Some(*v),
            RateValue::Infinite => None,
        }
    }

    pub fn scale(self, s: f64) -> Self {
        match self {
            RateValue::Finite(v) => RateValue::Finite(v * s),
            RateValue::Infinite => RateValue::Infinite,
        }
    }
}

impl std::ops::Add for RateValue {
    type Output = RateValue;
    fn add(self, rhs: RateValue) -> RateValue {
        match (self, rhs) {
            (RateValue::Finite(a), RateValue::Finite(b)) => RateValue::Finite(a + b),
            _ => RateValue::Infinite,
        }
    }
}

impl PartialOrd for RateValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (RateValue::Infinite, RateValue::Infinite) => Some(Ordering::Equal),
            (RateValue::Infinite, _) => Some(Ordering::Greater),
            (_, RateValue::Infinite) => Some(Ordering::Less),
            (RateValue::Finite(a), RateValue::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for RateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateValue::Finite(v) => write!(f, "{v:.12e}"),
            RateValue::Infinite => write!(f, "inf"),
        }
    }
}

/// Angular-fiber H⁻¹ norm with its optimal control and multiplier.
#[derive(Clone, Debug)]
pub struct FiberNormResult {
    pub value: RateValue,
    /// c with ∂_θc = g minimizing ∫c²/h.
    pub control: Option<Vec<f64>>,
    /// φ with ∂_θφ = -c/h maximizing 2∫gφ - ∫h(∂_θφ)².
    pub multiplier: Option<Vec<f64>>,
    /// Value of the sup form at the multiplier.
    pub sup_value: Option<f64>,
}

impl FiberNormResult {
    fn infinite() -> Self {
        FiberNormResult { value: RateValue::Infinite, control: None, multiplier: None, sup_value: None }
    }
}

/// ‖g‖²_{-1,h} on the circle: c* = C - (∫C/h)/(∫1/h), C the antiderivative of g.
pub fn fiber_norm_sq(grid: &AngularGrid, g: &[f64], h: &[f64], tol_mean: f64) -> Result<FiberNormResult> {
    if let Some((j, &hmin)) = h.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(Error::SingularWeight { node: j, min_eig: hmin });
    }
    let big_c = match grid.antiderivative(g, tol_mean) {
        Ok(c) => c,
        Err(Error::NonZeroMean { .. }) => return Ok(FiberNormResult::infinite()),
        Err(e) => return Err(e),
    };
    let inv_h: Vec<f64> = h.iter().map(|x| 1.0 / x).collect();
    let shift = grid.dot(&big_c, &inv_h) / grid.quad(&inv_h);
    let c: Vec<f64> = big_c.iter().map(|x| x - shift).collect();
    let value = grid.weight() * c.iter().zip(&inv_h).map(|(c, ih)| c * c * ih).sum::<f64>();
    let dphi: Vec<f64> = c.iter().zip(&inv_h).map(|(c, ih)| -c * ih).collect();
    let phi = grid.antiderivative(&dphi, 1e-6)?;
    let dphi_num = grid.d_theta(&phi);
    let sup_value = 2.0 * grid.dot(g, &phi) - grid.weight() * h.iter().zip(&dphi_num).map(|(h, d)| h * d * d).sum::<f64>();
    Ok(FiberNormResult {
        value: RateValue::Finite(value),
        control: Some(c),
        multiplier: Some(phi),
        sup_value: Some(sup_value),
    })
}

/// Spatial χ-weighted H⁻¹ norm with both variational values.
#[derive(Clone, Debug)]
pub struct SpatialNormResult {
    pub value: RateValue,
    /// Solution of ∇·(χ∇φ) = -g.
    pub phi: Option<Vec<f64>>,
    /// Optimal control c = -χ∇φ (∇·c = g).
    pub control: Option<Vec<Vec<f64>>>,
    pub inf_value: Option<f64>,
    pub sup_value: Option<f64>,
}

fn invert_small(n: usize, a: &[f64]) -> Vec<f64> {
    match n {
        1 => vec![1.0 / a[0]],
        _ => {
            let det = a[0] * a[3] - a[1] * a[2];
            vec![a[3] / det, -a[1] / det, -a[2] / det, a[0] / det]
        }
    }
}

/// ‖g‖²_{-1,χ} on the periodic box.
pub fn spatial_weighted_norm_sq(space: &SpatialGrid, g: &[f64], chi: &TensorField, tol_mean: f64) -> Result<SpatialNormResult> {
    let sol = match space.solve_weighted_poisson(chi, g, tol_mean, TOL_LIN) {
        Ok(s) => s,
        Err(Error::NonZeroMean { .. }) => {
            return Ok(SpatialNormResult { value: RateValue::Infinite, phi: None, control: None, inf_value: None, sup_value: None })
        }
        Err(e) => return Err(e),
    };
    let phi = sol.phi;
    let n = space.dim();
    let grad = space.grad(&phi);
    let flux = space.apply_tensor(chi, &grad);
    let control: Vec<Vec<f64>> = flux.iter().map(|c| c.iter().map(|x| -x).collect()).collect();
    let value = space.quad(&g.iter().zip(&phi).map(|(a, b)| a * b).collect::<Vec<_>>());
    let mut inf_density = vec![0.0; space.len()];
    let mut dirichlet = vec![0.0; space.len()];
    for i in 0..space.len() {
        let inv = invert_small(n, chi.at(i));
        let mut s = 0.0;
        let mut dsum = 0.0;
        for d in 0..n {
            for e in 0..n {
                s += control[d][i] * inv[d * n + e] * control[e][i];
            }
            dsum += grad[d][i] * flux[d][i];
        }
        inf_density[i] = s;
        dirichlet[i] = dsum;
    }
    let inf_value = space.quad(&inf_density);
    let sup_value = 2.0 * value - space.quad(&dirichlet);
    Ok(SpatialNormResult {
        value: RateValue::Finite(value),
        phi: Some(phi),
        control: Some(control),
        inf_value: Some(inf_value),
        sup_value: Some(sup_value),
    })
}
