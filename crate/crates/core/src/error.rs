use thiserror::Error;

/// Errors raised by operators, inner solvers and outer drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("group structure is not a partition: {0}")]
    NotPartition(String),

    #[error("singular linear system (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("conjugate gradient stopped at relative residual {residual:.3e} after {iterations} iterations")]
    CgNotConverged { residual: f64, iterations: usize },

    #[error("constraint block is rank deficient (rank {rank} < {rows}) and the data is inconsistent")]
    RankDeficient { rank: usize, rows: usize },

    #[error("infeasible data: {0}")]
    Infeasible(String),

    #[error("nested solver did not converge (gradient norm {grad_norm:.3e})")]
    NestedNotConverged { grad_norm: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
