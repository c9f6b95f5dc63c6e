//! Bundles a sampled model with its equilibrium, operators, coefficients and spatial grid.

use crate::coeffs::{compute_coefficients, CoefficientSet};
use crate::equilibrium::{solve_equilibrium, EquilibriumOptions, EquilibriumState};
use crate::error::Result;
use crate::grid::{AngularGrid, SpatialGrid};
use crate::linops::{assemble_linearized, LinearizedOps};
use crate::model::{ModelSpec, SampledModel};

#[derive(Clone, Debug)]
pub struct Problem {
    pub model: SampledModel,
    pub eq: EquilibriumState,
    pub ops: LinearizedOps,
    pub coeffs: CoefficientSet,
    pub space: SpatialGrid,
}

impl Problem {
    pub fn build(spec: &ModelSpec, m: usize, space: SpatialGrid, opts: &EquilibriumOptions) -> Result<Self> {
        let grid = AngularGrid::new(m)?;
        let model = SampledModel::new(spec, &grid)?;
        let eq = solve_equilibrium(&model, opts)?;
        let ops = assemble_linearized(&model, &eq)?;
        let coeffs = compute_coefficients(&model, &eq, &ops)?;
        if space.dim() != model.dim() {
            return Err(crate::Error::DimensionMismatch(format!(
                "spatial grid has dimension {} but the velocity field has {}",
                space.dim(),
                model.dim()
            )));
        }
        Ok(Problem { model, eq, ops, coeffs, space })
    }

    pub fn grid(&self) -> &AngularGrid {
        &self.model.grid
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }
}
