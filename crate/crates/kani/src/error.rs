use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: bad magic {found:?}", path.display())]
    BadMagic { path: PathBuf, found: String },
    #[error("{}: unsupported version {found:?}", path.display())]
    BadVersion { path: PathBuf, found: String },
    #[error("{}: shape mismatch, header says {expected} values but payload holds {found}", path.display())]
    ShapeMismatch { path: PathBuf, expected: usize, found: usize },
    #[error("{}: non-finite value at index {index}", path.display())]
    NonFinitePayload { path: PathBuf, index: usize },
    #[error("{}: line {line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{0}")]
    Core(#[from] kani_core::Error),
    #[error("{0}")]
    Config(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
    }

    /// Process exit code: 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinitePayload { .. } | Error::GradCheck(_) | Error::Core(kani_core::Error::NonFinite(_)) => 2,
            _ => 1,
        }
    }
}
