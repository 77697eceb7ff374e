//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChnsError {
    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("meshes are not related in the hierarchy: {0}")]
    NoCommonMesh(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("nonlinear solve failed after {iterations} iterations, residual {residual:.3e}")]
    NonlinearSolve { iterations: usize, residual: f64 },

    #[error("active set cycling after {iterations} iterations, residual {residual:.3e}")]
    ActiveSetCycle { iterations: usize, residual: f64 },

    #[error("line search failed: step size {step:.3e} below limit")]
    LineSearch { step: f64 },

    #[error("POD rank exceeded: requested {requested} modes, numerical rank is {rank}")]
    PodRank { requested: usize, rank: usize },

    #[error("basis mode {mode} is not weakly divergence-free (residual {residual:.3e})")]
    NotDivergenceFree { mode: usize, residual: f64 },

    #[error("biactive set is nonempty ({count} dofs); directional derivative undefined")]
    Biactive { count: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ChnsError>;
