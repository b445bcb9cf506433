use thiserror::Error;

/// Errors produced by graph construction, propagation and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),

    #[error("grid graphs need a perfect-square dimension, got {0}")]
    NotPerfectSquare(usize),

    #[error("custom graph is not connected (level {0} unreachable from level 0)")]
    DisconnectedGraph(usize),

    #[error("invalid edge ({0}, {1}) for dimension {2}")]
    InvalidEdge(usize, usize, usize),

    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("matrix is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is not unitary (defect {0:.3e})")]
    NotUnitary(f64),

    #[error("matrix is not traceless (|trace| = {0:.3e})")]
    NotTraceless(f64),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("control amplitude shape {got} does not match basis size {expected}")]
    ControlShapeMismatch { got: usize, expected: usize },

    #[error("non-finite value encountered during {0}")]
    NonFinite(&'static str),

    #[error("feedback mesh needs at least 8 steps, got {0}")]
    MeshTooCoarse(usize),

    #[error("schedule has zero pulse area, nothing to emit")]
    EmptyPulse,

    #[error("invalid gate specification: {0}")]
    InvalidGateSpec(String),

    #[error("matrix file format error: {0}")]
    MatrixFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
