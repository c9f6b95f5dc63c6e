//! Numerical toolkit for slow-fast interacting diffusions on the circle.
//!
//! The pipeline goes from a microscopic model (angles θ on the circle coupled through a pair
//! potential, positions q driven by a slow velocity V(θ)) to its macroscopic description:
//! local equilibrium G, linearized operators, diffusivity and mobility matrices, weighted
//! H⁻¹ rate functionals and their small-ε limit, with kinetic and particle-level checks.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acceptance;
pub mod cli;
pub mod coeffs;
pub mod config;
pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod hminus;
pub mod kinetic;
pub mod linops;
pub mod manifest;
pub mod model;
pub mod particles;
pub mod problem;
pub mod ratefunc;
pub mod report;
pub mod stats;

pub use error::{Error, Result};
