use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input data is unusable (non-finite values, gaps, too short, all missing).
    #[error("data error: {0}")]
    Data(String),
    /// A caller broke an operation's precondition (shapes, bounds, ordering).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A recursion hit a non-positive or non-finite variance.
    #[error("numerical degeneracy at step {step}: {detail}")]
    Degenerate { step: usize, detail: String },
    /// A linear-algebra routine failed (ill-conditioning, divergence).
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A malformed record in an input file.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
