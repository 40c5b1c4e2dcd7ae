use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// `exp` overflowed or underflowed while mapping parameters to probabilities.
    #[error("parameter vector saturates the exponential map: {0}")]
    Saturation(String),

    #[error("degenerate table: {0}")]
    Degenerate(String),

    #[error("oracle found no consistent active set: {0}")]
    OracleInconsistency(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerically singular matrix: {0}")]
    NumericalRank(String),

    #[error("relative efficiency undefined: baseline power equals its size")]
    UndefinedEfficiency,

    #[error("too many failed replications: {failed} of {reps}")]
    TooManyFailures { failed: usize, reps: usize },

    /// Malformed table input. `line` and `column` are 1-based; 0 means unknown.
    #[error("parse error{}: {message}", position(*line, *column))]
    Parse {
        line: u64,
        column: u64,
        message: String,
    },
}

fn position(line: u64, column: u64) -> String {
    match (line, column) {
        (0, _) => String::new(),
        (l, 0) => format!(" at line {l}"),
        (l, c) => format!(" at line {l}, column {c}"),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
