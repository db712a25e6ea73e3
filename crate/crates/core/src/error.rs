use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument or model parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input data violates an invariant (ordering, positivity, ...).
    #[error("invalid data: {0}")]
    Data(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A variance that must be strictly positive came out as zero or negative.
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("replication failed (n = {n}, rep = {rep}, seed = {seed:#018x}): {source}")]
    Replication {
        n: usize,
        rep: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// True for errors caused by user input rather than by a defect.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Internal(_) => false,
            Error::Replication { source, .. } => source.is_user_error(),
            _ => true,
        }
    }
}
