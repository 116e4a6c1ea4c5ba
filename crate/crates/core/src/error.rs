use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroNorm { row: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("negative distance at ({row}, {col})")]
    NegativeDistance { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index {index} out of range for batch of {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("need at least {needed} identities, dataset has {available}")]
    NotEnoughIdentities { needed: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("forward cache does not match the current parameters")]
    StaleCache,

    #[error("verification protocol is empty")]
    EmptyProtocol,

    #[error("verification protocol is unbalanced: {same} same vs {different} different pairs")]
    UnbalancedProtocol { same: usize, different: usize },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
