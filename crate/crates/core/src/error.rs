use thiserror::Error;

use crate::krylov::KrylovTrace;

/// Errors raised by the laboratory operations.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error(
        "singular matrix: pivot {pivot:.3e} at column {column} below tolerance {tolerance:.3e}"
    )]
    SingularMatrix {
        column: usize,
        pivot: f64,
        tolerance: f64,
    },

    #[error("invalid rank {rank} for dimension {n}")]
    InvalidRank { rank: usize, n: usize },

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("QR iteration did not converge after {iterations} sweeps ({converged} of {n} eigenvalues found)")]
    NoConvergence {
        iterations: usize,
        converged: usize,
        n: usize,
    },

    #[error("recovered structure is inconsistent: {0}")]
    StructureInconsistent(String),

    #[error("invalid Jordan spec: {0}")]
    InvalidSpec(String),

    #[error(
        "no similarity with condition number <= {cap} found in {draws} draws (best {best:.3e})"
    )]
    CondCapUnreachable { cap: f64, draws: usize, best: f64 },

    #[error(
        "GMRES breakdown at iteration {iteration} with relative residual {relative_residual:.3e}"
    )]
    Breakdown {
        iteration: usize,
        relative_residual: f64,
    },

    #[error("GMRES did not reach the tolerance within {} iterations", .0.residual_norms.len().saturating_sub(1))]
    GmresNoConvergence(Box<KrylovTrace>),

    #[error("singular block: {0}")]
    SingularBlock(String),

    #[error("evaluation point lies on deflated root {index} (distance {distance:.3e})")]
    AtRoot { index: usize, distance: f64 },

    #[error("Newton iteration diverged: {0}")]
    Diverged(String),

    #[error("linear solve failed inside Newton: {0}")]
    LinearSolveFailure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
