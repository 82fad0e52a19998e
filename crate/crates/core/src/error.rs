use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("matrix is singular: {0}")]
    Singular(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}
