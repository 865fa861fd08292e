use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("inputs {first} and {second} coincide within tolerance")]
    DuplicateInputs { first: usize, second: usize },

    #[error("Gram matrix is singular even after jitter")]
    SingularGram,

    #[error("regularization weight must be nonnegative, got {0}")]
    NegativeLambda(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("solver diverged: {0}")]
    SolverDiverged(&'static str),

    #[error("ellipsoid radius is degenerate (gamma* = {0})")]
    DegenerateRadius(f64),

    #[error("linear objective is unbounded over the ellipsoid")]
    UnboundedDirection,

    #[error("dual norm program has no feasible multiplier")]
    InfeasibleDual,

    #[error("matrix is not positive semidefinite (min eigenvalue {0})")]
    NotPositiveSemidefinite(f64),

    #[error("ellipsoid has a collapsed axis; its shape matrix is unbounded")]
    CollapsedEllipsoid,
}

pub type Result<T> = std::result::Result<T, Error>;
