use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LameError>;

#[derive(Debug, Error)]
pub enum LameError {
    /// Operand shapes do not fit the operation.
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller broke a precondition of an operation.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Bad user data (corpus contents, token ids, empty inputs).
    #[error("input error: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A checkpoint does not fit the vocabulary, config or labels it is used with.
    #[error("compatibility error: {0}")]
    Compat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl LameError {
    pub fn contract(msg: impl Into<String>) -> Self {
        LameError::Contract(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        LameError::Input(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        LameError::Config(msg.into())
    }

    pub fn compat(msg: impl Into<String>) -> Self {
        LameError::Compat(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LameError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the CLI: 1 for user-facing problems, 2 for
    /// violated internal invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            LameError::Shape { .. } | LameError::Contract(_) => 2,
            _ => 1,
        }
    }
}
