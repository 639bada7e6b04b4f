use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Validation(String),
    #[error("missing {artifact} at {path}; run `romsuite {stage}` first")]
    MissingArtifact {
        artifact: &'static str,
        path: PathBuf,
        stage: &'static str,
    },
    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: romsuite_core::Error,
    },
    #[error(transparent)]
    Core(#[from] romsuite_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn is_numerical(&self) -> bool {
        match self {
            AppError::Core(e) | AppError::Trajectory { source: e, .. } => e.is_numerical(),
            _ => false,
        }
    }

    /// 1 for invalid input or missing artifacts, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            2
        } else {
            1
        }
    }
}

pub(crate) fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> AppError {
    let context = context.into();
    move |source| AppError::Io { context, source }
}
