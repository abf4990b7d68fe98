use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad input: malformed config, inconsistent dimensions, violated preconditions.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A trajectory became non-finite part way through the grid.
    #[error("trajectory diverged at grid index {index} of {len} (t = {time})")]
    Diverged { index: usize, len: usize, time: f64 },

    /// Query outside the domain of a grid, spline or dataset.
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// A linear system or Hessian that cannot be used.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        msg: String,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool and the C ABI.
    ///
    /// 1 validation, 2 numerical failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) | Error::OutOfDomain { .. } | Error::Parse { .. } => 1,
            Error::Diverged { .. } | Error::Numerical(_) => 2,
            Error::Io { .. } => 3,
        }
    }
}
