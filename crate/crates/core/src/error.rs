use std::io;

/// Every failure the solver, diagnostics and CLI can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cell index ({i}, {j}) outside a {n_v}x{n_g} grid")]
    IndexOutOfRange {
        i: usize,
        j: usize,
        n_v: usize,
        n_g: usize,
    },

    #[error("solver did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
