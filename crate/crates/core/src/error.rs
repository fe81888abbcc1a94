use thiserror::Error;

use crate::decoding::Hypothesis;

/// Errors shared by every stage of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad sizes, inconsistent probabilities, empty inputs
    /// where a setting requires data).
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed or out-of-range data (bad ids, broken files, empty phrases).
    #[error("data error: {0}")]
    Data(String),
    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    /// An exhaustive search was asked to enumerate more than its guard allows.
    #[error("search refused: {0}")]
    Refused(String),
    /// Constrained search ended without a finished hypothesis meeting every
    /// constraint. `best` is the closest partial result.
    #[error("constrained decoding failed: best hypothesis met {met} of {total} constraint tokens")]
    ConstraintFailure { best: Box<Hypothesis>, met: usize, total: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
