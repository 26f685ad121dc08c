use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] gffperc_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot parse {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot start worker pool: {0}")]
    ThreadPool(String),
}

impl HarnessError {
    /// Stable machine-readable tag used in the CLI error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            HarnessError::Core(_) => "core",
            HarnessError::Config(_) | HarnessError::ConfigFile { .. } => "config",
            HarnessError::Json(_) => "json",
            HarnessError::Io(_) => "io",
            HarnessError::ThreadPool(_) => "threads",
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
