use alloc::string::String;

/// Errors raised by model construction, optimizer updates and the theory helpers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("parameter vector became non-finite at outer step {outer_step}, inner step {inner_step}")]
    NonFinite { outer_step: usize, inner_step: usize },

    #[error("eigendecomposition did not converge after {sweeps} sweeps; input is ill-conditioned")]
    EigenNoConvergence { sweeps: usize },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("matrix is not symmetric positive semi-definite: {0}")]
    NotPositiveSemiDefinite(String),

    #[error("embedding matrix does not have full column rank")]
    RankDeficientEmbedding,

    #[error("second moment matrix has rank {rank} < {dim}; a full-rank matrix is required")]
    RankDeficient { rank: usize, dim: usize },

    #[error("inadmissible learning-rate constants: {0}")]
    Inadmissible(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("mismatched checkpoint grids: {0}")]
    GridMismatch(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
