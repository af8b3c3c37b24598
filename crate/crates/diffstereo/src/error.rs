use std::io;
use std::path::Path;

use diffstereo_core::Error as CoreError;

/// A failure with the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input: missing files, malformed config, incompatible checkpoint.
    #[error("{0}")]
    User(String),
    /// Anything the user could not have avoided.
    #[error("{0}")]
    Internal(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    /// Wrap an IO error on `path`; missing or unreadable files are the
    /// user's to fix.
    pub fn io(action: &str, path: &Path, err: io::Error) -> Self {
        let msg = format!("cannot {action} {}: {err}", path.display());
        match err.kind() {
            io::ErrorKind::NotFound
            | io::ErrorKind::PermissionDenied
            | io::ErrorKind::AlreadyExists
            | io::ErrorKind::InvalidInput
            | io::ErrorKind::InvalidData
            | io::ErrorKind::NotADirectory
            | io::ErrorKind::IsADirectory
            | io::ErrorKind::UnexpectedEof => CliError::User(msg),
            _ => CliError::Internal(msg),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite { .. } | CoreError::External(_) => CliError::Internal(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

/// Attach a path to a core error while keeping its exit code.
pub(crate) fn with_path(path: &Path) -> impl FnOnce(CoreError) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::User(m) => CliError::User(format!("{}: {m}", path.display())),
        CliError::Internal(m) => CliError::Internal(format!("{}: {m}", path.display())),
    }
}
