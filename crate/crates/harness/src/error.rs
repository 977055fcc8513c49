use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("metrics schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Core(#[from] batchrl::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the user's input rather than by a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_) | HarnessError::Core(batchrl::Error::Config(_))
        )
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
