use thiserror::Error;

/// Errors raised by the ensemble solvers and evaluators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("field is not finite at node {node}")]
    NonFinite { node: usize },

    #[error("field lives on a different grid")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("operation `{op}` does not support the {variant} Hamiltonian")]
    Variant { op: &'static str, variant: &'static str },

    #[error("density error: {0}")]
    Density(String),

    #[error("Jacobian is singular at the probe point (det = {det:e})")]
    SingularJacobian { det: f64 },

    #[error("CFL violation: ratio {ratio:.3} exceeds {limit}")]
    Cfl { ratio: f64, limit: f64 },

    #[error("negative density {value:e} at node {node} (t = {t})")]
    NegativeDensity { node: usize, value: f64, t: f64 },

    #[error("momentum gradient {gradient:e} at node {node} exceeds the pre-caustic bound {bound:e}")]
    Caustic { node: usize, gradient: f64, bound: f64 },

    #[error("insufficient history: need at least {need} time levels, got {got}")]
    InsufficientHistory { need: usize, got: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unit spinor map is not normalized (|u|^2 - 1 = {deviation:e})")]
    NotNormalized { deviation: f64 },

    #[error("phase jump of {jump:.3} rad between nodes {node} and {next} is not resolved by the grid")]
    PhaseJump { node: usize, next: usize, jump: f64 },

    #[error("run too short: {0}")]
    RunTooShort(String),

    #[error("empty ensemble")]
    EmptyEnsemble,
}

pub type Result<T> = std::result::Result<T, Error>;
