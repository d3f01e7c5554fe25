//! Error type shared by all modules.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An operand had the wrong dimension for the requested operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// An argument was out of range, non-finite, or otherwise malformed.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix that must be Hermitian was not, beyond tolerance.
    #[error("matrix is not Hermitian (max deviation {dev:.3e})")]
    NotHermitian { dev: f64 },

    /// A state or count record violates a physics invariant.
    #[error("non-physical state: {0}")]
    NonPhysical(String),

    /// Post-selection or normalization hit a zero-weight state.
    #[error("zero-trace state in {0}")]
    ZeroTrace(&'static str),

    /// A measurement record set cannot support the requested reconstruction.
    #[error("incomplete measurement data: {0}")]
    IncompleteData(String),

    /// The linear system for reconstruction is singular.
    #[error("singular linear system in {0}")]
    SingularSystem(&'static str),

    /// The iterative eigensolver did not converge.
    #[error("eigensolver did not converge within {0} sweeps")]
    NoConvergence(usize),

    /// A scenario or link configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// Filesystem or serialization failure, with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
