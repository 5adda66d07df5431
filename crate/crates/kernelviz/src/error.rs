use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] kernelviz_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{} already exists", .0.display())]
    AlreadyExists(PathBuf),
    #[error("integrity error in {}: {reason}", path.display())]
    Integrity { path: PathBuf, reason: String },
    #[error("unsupported schema version {found} in {} (expected {expected})", path.display())]
    UnsupportedVersion { path: PathBuf, found: u64, expected: u64 },
    #[error("config {}: {reason}", path.display())]
    Config { path: PathBuf, reason: String },
    #[error("{}: {reason}", path.display())]
    Image { path: PathBuf, reason: String },
    #[error("unknown adapter '{name}' (available: {available})")]
    UnknownAdapter { name: String, available: String },
}

impl Error {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn integrity(path: &Path, reason: impl Into<String>) -> Self {
        Error::Integrity {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

/// Attaches a path to IO errors.
pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
