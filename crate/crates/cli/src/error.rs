use std::path::PathBuf;

use crate::array_io::ArrayError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, configuration or input files.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Array { path: PathBuf, source: ArrayError },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] pmace_core::Error),
    /// The run started but could not complete.
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for usage or configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Array { .. } => 1,
            CliError::Core(e) if is_config_error(e) => 1,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

fn is_config_error(e: &pmace_core::Error) -> bool {
    use pmace_core::Error::*;
    matches!(
        e,
        InvalidParameter(_)
            | UnknownKind(_)
            | InfeasibleGrid(_)
            | ShapeMismatch { .. }
            | LengthMismatch { .. }
    )
}

pub type CliResult<T> = std::result::Result<T, CliError>;
