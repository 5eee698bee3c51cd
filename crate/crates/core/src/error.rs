use thiserror::Error;

use crate::data::idx::IdxError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("variable belongs to a different graph")]
    ForeignVar,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("csv parse error at row {row}, column {column}: {message}")]
    Csv {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("container decode error: {0}")]
    Container(String),
    #[error("training diverged at step {step}: loss {value} (over-regularized?)")]
    Diverged { step: usize, value: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
