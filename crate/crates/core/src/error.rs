use crate::mat::MatError;
use crate::quadform::QuadError;
use crate::subproblem::SubproblemError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Mat(#[from] MatError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Subproblem(#[from] SubproblemError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("problem generation failed after {attempts} attempts")]
    GenerationFailed { attempts: usize },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("agent {agent}: {source}")]
    Agent { agent: usize, source: Box<Error> },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
