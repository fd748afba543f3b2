use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("weights sum to zero or below the degeneracy threshold")]
    DegenerateWeights,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("partition failed: {0}")]
    Partition(String),
    #[error("local training diverged at step {step}")]
    Divergence { step: usize },
    #[error("client has converged (zero gradient or zero update)")]
    ClientConverged,
    #[error("round skipped: {0}")]
    RoundSkipped(&'static str),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
