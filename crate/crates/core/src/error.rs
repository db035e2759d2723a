use thiserror::Error;

use crate::optim::Trace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("accumulator entry v[{index}] = {value} is negative")]
    NegativeAccumulator { index: usize, value: f64 },

    #[error("inconsistent objective metadata: {0}")]
    Metadata(String),

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("non-finite activation at layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("operator produced a non-finite value at Lanczos iteration {iteration}")]
    OperatorNotFinite { iteration: usize },

    /// A run produced a non-finite objective value or gradient. The trace up to
    /// (and including) the offending iterate is kept for diagnosis.
    #[error("run diverged at t = {t}: {what} is not finite")]
    Diverged {
        t: u64,
        what: &'static str,
        trace: Box<Trace>,
    },

    #[error("malformed IDX file: {0}")]
    Idx(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
