use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid initial-state box: {0}")]
    InvalidBox(String),
    #[error("neighborhood size {k} out of range for a flock of {birds}")]
    NeighborhoodOutOfRange { k: usize, birds: usize },
    #[error("bird index {index} out of range for a flock of {birds}")]
    IndexOutOfRange { index: usize, birds: usize },
    #[error("heading undefined for a bird with zero velocity")]
    ZeroHeading,
    #[error("swarm needs at least two particles and one iteration")]
    EmptySwarm,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("fixed prefix of length {prefix} exceeds horizon {horizon}")]
    PrefixTooLong { prefix: usize, horizon: usize },
    #[error("fixed entry follows an unfixed entry in the plan of bird {0}")]
    MalformedPlan(usize),
    #[error("plan is not fully concrete over the requested horizon")]
    IncompletePlan,
    #[error("threshold level index {index} out of range 1..={m}")]
    ThresholdIndex { index: usize, m: usize },
    #[error("empty subflock")]
    EmptySubflock,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
