use std::path::{Path, PathBuf};

pub type AppResult<T> = Result<T, AppError>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(rjpo_core::Error),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for configuration, 2 for numerical and 3 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 1,
            AppError::Numerical(_) => 2,
            AppError::Io { .. } => 3,
        }
    }
}

impl From<rjpo_core::Error> for AppError {
    fn from(e: rjpo_core::Error) -> Self {
        if e.is_numerical() {
            AppError::Numerical(e)
        } else {
            AppError::Config(e.to_string())
        }
    }
}
