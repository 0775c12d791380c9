use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("index {index} out of range for {len} scan positions")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    /// Pixels covered by at least one patch whose accumulated weight is zero.
    #[error("consensus weights vanish on {count} covered pixels (first: {first:?})")]
    SingularWeights {
        count: usize,
        first: Vec<(usize, usize)>,
    },

    #[error("iteration diverged at iteration {iteration}: non-finite state")]
    Diverged { iteration: usize },

    #[error("scan grid infeasible: {0}")]
    InfeasibleGrid(String),

    #[error("zero normalizer: {0}")]
    ZeroNormalizer(String),

    #[error("value not in the range of the agent: {0}")]
    NotInRange(String),

    #[error("unknown kind `{0}`")]
    UnknownKind(String),

    #[error("scan pattern has no adjacent pairs")]
    NoAdjacentPairs,
}
