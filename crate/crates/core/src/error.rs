use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("grid would have {nodes} lattice nodes, above the cap of {cap}")]
    NodeCountOverflow { nodes: usize, cap: usize },

    #[error("degenerate mesh: h = {h} for a domain of diameter {diameter}")]
    DegenerateMesh { h: f64, diameter: f64 },

    #[error("no closed-form kernel for {0}; use a discrete Green function instead")]
    UnsupportedKernel(String),

    #[error("point {0:?} is outside the support of the exit distribution")]
    WrongSupport(Vec<f64>),

    #[error("point {0:?} is not an interior point")]
    NotInterior(Vec<f64>),

    #[error("x and y coincide")]
    CoincidentPoints,

    #[error("coefficient field violates ellipticity at node {node}: {detail}")]
    CoefficientViolation { node: usize, detail: String },

    #[error("matrix is not positive definite (pivot {pivot} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("level n = {level} cannot be resolved: {detail}")]
    Unresolvable { level: f64, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("step budget of {0} exceeded")]
    StepBudget(usize),
}
