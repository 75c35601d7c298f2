use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Core(#[from] epnkit_core::Error),
    /// A check ran and did not pass.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// 1 for failed checks and numerical failures, 2 for usage and I/O.
    pub fn exit_code(&self) -> i32 {
        use epnkit_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Core(E::Io(_) | E::Parse(_) | E::InvalidArgument(_)) => 2,
            CliError::Core(_) | CliError::Failed(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
