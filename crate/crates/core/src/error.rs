use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("{op} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        op: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("detailed balance infeasible around cycle {cycle:?} (relative mismatch {mismatch:e})")]
    Infeasible { cycle: Vec<usize>, mismatch: f64 },

    #[error("dominance margin for species {index} is {margin:e} (must be positive)")]
    Certificate { index: usize, margin: f64 },

    #[error("quadratic form bound violated: lhs {lhs:e} < rhs {rhs:e} at u={u:?}, z={z:?}")]
    Falsified {
        lhs: f64,
        rhs: f64,
        u: Vec<f64>,
        z: Vec<f64>,
    },

    #[error("noise model evaluated to a non-finite value at u={0:?}")]
    NoiseModel(Vec<f64>),

    #[error("time step failed at t={t}: residual {residual:e}")]
    StepFailure { t: f64, residual: f64 },

    #[error("state blew up at t={t}")]
    BlowUp { t: f64 },

    #[error("all {paths} ensemble paths were truncated")]
    EnsembleFailed { paths: usize },

    #[error("invalid run configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Domain {
        op,
        detail: detail.into(),
    }
}
