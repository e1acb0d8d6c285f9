use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("requested {requested} items but only {available} candidates exist")]
    NotEnoughCandidates { requested: usize, available: usize },
    #[error("`{0}` is not among the candidates")]
    UnknownCandidate(String),
    #[error("duplicate entry `{0}` in ordered list")]
    DuplicateEntry(String),
    #[error("action set is empty")]
    EmptyActions,
    #[error("reference set is empty")]
    EmptyReference,
    #[error("intent has no target documents")]
    EmptyTargets,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unfilled template slot `{0}`")]
    MissingSlot(String),
    #[error("group needs at least 2 members, got {0}")]
    GroupTooSmall(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    /// Carries the last finite flat parameter vector.
    #[error("training diverged at iteration {iteration}")]
    Divergence { iteration: usize, last_good: alloc::vec::Vec<f64> },
    #[error("no satisfiable intent in catalog")]
    NoSatisfiableIntent,
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("missing trained artifact for row `{0}`")]
    MissingArtifact(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = core::result::Result<T, Error>;
