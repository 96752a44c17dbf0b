use thiserror::Error;

/// Error taxonomy shared by every module. The CLI maps these onto exit codes:
/// invalid input and model mismatches are user errors (1), rejected hypotheses
/// are refusals (2), and resource caps are capacity errors (3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("model mismatch: word does not belong to the given model")]
    ModelMismatch,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),
    #[error("hypothesis validation failed: {0}")]
    HypothesisRejected(String),
}

pub type Result<T> = std::result::Result<T, Error>;
