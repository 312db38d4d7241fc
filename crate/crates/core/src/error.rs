use std::path::PathBuf;

/// Errors produced by the core library.
///
/// `Parse`, `Validation`, `SignConflict` and `Io` are input problems the
/// caller can fix; `Contract`, `NonFinite` and `Incompatible` indicate a
/// broken internal precondition or a corrupted artifact.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    /// A user pair listed as both trusted and distrusted.
    #[error("pair ({0}, {1}) appears in both the trust and the distrust file")]
    SignConflict(u64, u64),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("incompatible {0}")]
    Incompatible(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True when the error stems from bad user input rather than an
    /// internal failure. CLI layers map this to a distinct exit code.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Parse { .. } | Error::Validation(_) | Error::SignConflict(..)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
