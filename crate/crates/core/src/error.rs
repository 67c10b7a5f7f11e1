use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),

    #[error("operator too large to materialize ({entries} entries)")]
    TooLarge { entries: usize },

    #[error("right-hand side is zero")]
    ZeroRhs,

    /// A normalization constant fell below the breakdown threshold. The
    /// Krylov space is invariant; callers should stop extending it.
    #[error("bidiagonalization breakdown at step {step} ({which} = {value:e})")]
    Breakdown {
        step: usize,
        which: &'static str,
        value: f64,
    },

    #[error("A W is rank deficient (|R[{index},{index}]| = {value:e})")]
    RankDeficient { index: usize, value: f64 },

    /// The residual already lies in range(A W); there is nothing to extend.
    #[error("residual lies in range(A W); no extension needed")]
    NoExtensionNeeded,

    #[error("subspace containment violated: residual {residual:e}")]
    ContainmentViolated { residual: f64 },

    #[error("storage limit {limit} cannot hold {needed} basis vectors")]
    StorageExceeded { limit: usize, needed: usize },
}
