use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NoodleError>;

#[derive(Debug, Error)]
pub enum NoodleError {
    /// A precondition of an operation was violated (shape mismatch, out-of-range argument).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown configuration keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },
}

impl NoodleError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NoodleError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            NoodleError::Divergence { .. }
                | NoodleError::NonFinite(_)
                | NoodleError::NotPositiveDefinite(_)
        )
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err($crate::error::NoodleError::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
