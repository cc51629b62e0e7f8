use thiserror::Error;

use crate::drift::IterationRecord;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {offset}: expected {}", expected.join(" or "))]
    Syntax { offset: usize, expected: Vec<String> },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("function `{name}` takes {expected} argument(s), got {found} (byte {offset})")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        offset: usize,
    },

    #[error("domain error in `{subexpr}`: {reason}")]
    Domain { subexpr: String, reason: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dissipativity violated at {} sample point(s), e.g. {:?}", points.len(), points.first())]
    Dissipativity { points: Vec<Vec<f64>> },

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("no convergence after {iterations} iteration(s): {reason}")]
    NoConvergence { iterations: usize, reason: String },

    #[error("self-consistent drift did not converge after {} iteration(s)", log.len())]
    DriftNoConvergence { log: Vec<IterationRecord> },

    #[error("equilibrium at {point:?} is not attracting (largest symmetrized eigenvalue {eigenvalue})")]
    UnstableEquilibrium { point: Vec<f64>, eigenvalue: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("parse error in table: {0}")]
    Table(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
