use std::path::{Path, PathBuf};

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, arguments or inputs; exit code 2.
    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] maskmotion_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg} at byte offset {offset}", path.display())]
    Format { path: PathBuf, offset: usize, msg: String },

    #[error("gif export to {}: {msg}", path.display())]
    Gif { path: PathBuf, msg: String },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for validation failures, 1 for everything that went wrong at run time.
    pub fn exit_code(&self) -> i32 {
        use maskmotion_core::Error as E;
        match self {
            CliError::Validation(_) => 2,
            CliError::Core(e) => match e {
                E::TrajectoryOutOfFrame { .. } | E::ObjectNotFound { .. } | E::NonFiniteLoss { .. } => 1,
                _ => 2,
            },
            CliError::Io { .. } | CliError::Format { .. } | CliError::Gif { .. } => 1,
        }
    }
}
