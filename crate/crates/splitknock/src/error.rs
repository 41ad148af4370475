use thiserror::Error;

/// Errors reported by the split knockoff pipeline and its numeric kernels.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:.3e}, tolerance {tol:.3e})")]
    NotPositiveSemidefinite { min_eig: f64, tol: f64 },

    #[error("orthonormal complement does not fit: rank {rank} + k {k} > rows {rows}")]
    InsufficientDimension { rank: usize, k: usize, rows: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFiniteInput { row: usize, col: usize },

    #[error("invalid edge: {0}")]
    InvalidEdge(String),

    #[error("invalid split: n1 = {n1} must satisfy 0 < n1 < n = {n}")]
    InvalidSplit { n1: usize, n: usize },

    #[error("invalid row index set: {0}")]
    InvalidIndex(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(
        "insufficient samples for the knockoff copy: need n2 >= m + p, got n2 = {n2}, m = {m}, p = {p}"
    )]
    InsufficientSamples { n2: usize, m: usize, p: usize },

    #[error("s vector is infeasible for the copy construction: {0}")]
    InfeasibleS(String),

    #[error("{count} of {total} path points did not converge (pass allow_nonconverged to proceed)")]
    NonConvergedPath { count: usize, total: usize },

    #[error("internal invariant violation: {0}")]
    InternalInvariantViolation(String),

    #[error(
        "screening kept too many features: |S_beta| = {kept_beta} + |S_gamma| = {kept_gamma} > n2 = {n2}; raise lambda_gamma"
    )]
    ScreeningTooLoose {
        kept_beta: usize,
        kept_gamma: usize,
        n2: usize,
    },

    #[error("invalid fold setup: {0}")]
    InvalidFolds(String),
}

pub type Result<T> = std::result::Result<T, Error>;
