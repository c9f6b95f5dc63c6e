use thiserror::Error;

/// Errors raised by the numerical modules and the command-line driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid model at `{key}`: {msg}")]
    InvalidModel { key: String, msg: String },

    #[error("field has nonzero mean {mean:e} (tolerance {tol:e})")]
    NonZeroMean { mean: f64, tol: f64 },

    #[error("weight is not positive definite at node {node} (min eigenvalue {min_eig:e})")]
    SingularWeight { node: usize, min_eig: f64 },

    #[error("no convergence after {iterations} iterations (last change {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("vacuous density at spatial node {node} (mass {mass:e})")]
    VacuousDensity { node: usize, mass: f64 },

    #[error("unsolvable {what}: compatibility defect {defect:e}")]
    Unsolvable { what: String, defect: f64 },

    #[error("linear solve did not reach tolerance: relative residual {residual:e}")]
    LinearSolve { residual: f64 },

    #[error("Dirichlet form is degenerate on the zero-mass subspace")]
    DegenerateDirichletForm,

    #[error("epsilon {epsilon} too large: recovery density reaches {min_value:e}")]
    EpsilonTooLarge { epsilon: f64, min_value: f64 },

    #[error("time stepping unstable at t = {time} (sup norm {sup:e})")]
    StepUnstable { time: f64, sup: f64 },

    #[error("time step {dt} exceeds stability bound {dt_max}")]
    StepTooLarge { dt: f64, dt_max: f64 },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { key: key.into(), msg: msg.into() }
    }

    pub(crate) fn model(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::InvalidModel { key: key.into(), msg: msg.into() }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidModel { .. } | Error::InvalidGrid(_) => 2,
            Error::Io(_) | Error::Serialization(_) => 1,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
