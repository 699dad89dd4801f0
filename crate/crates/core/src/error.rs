use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degree mismatch: {0} vs {1}")]
    DegreeMismatch(usize, usize),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is singular")]
    Singular,
    #[error("eigensolver failed: {0}")]
    Eigen(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
