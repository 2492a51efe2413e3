use std::io;
use std::path::Path;

use diver_core::llm::LlmError;

/// Application error. The variant decides the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<AppError>,
    },
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Backend(_) => 3,
            AppError::Data(_) => 4,
            AppError::Stage { source, .. } => source.exit_code(),
        }
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        AppError::Data(format!("{}: {err}", path.display()))
    }

    pub(crate) fn message(&self) -> String {
        match self {
            AppError::Config(m) | AppError::Backend(m) | AppError::Data(m) => m.clone(),
            other => other.to_string(),
        }
    }

    /// Prefixes the message, keeping the variant.
    pub fn context(self, prefix: impl std::fmt::Display) -> Self {
        match self {
            AppError::Config(m) => AppError::Config(format!("{prefix}: {m}")),
            AppError::Backend(m) => AppError::Backend(format!("{prefix}: {m}")),
            AppError::Data(m) => AppError::Data(format!("{prefix}: {m}")),
            AppError::Stage { stage, source } => AppError::Stage { stage, source: Box::new(source.context(prefix)) },
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            s @ AppError::Stage { .. } => s,
            other => AppError::Stage { stage, source: Box::new(other) },
        }
    }
}

impl From<diver_core::Error> for AppError {
    fn from(e: diver_core::Error) -> Self {
        match e {
            diver_core::Error::Llm(_) | diver_core::Error::Embedder(_) => AppError::Backend(e.to_string()),
            other => AppError::Data(other.to_string()),
        }
    }
}

impl From<LlmError> for AppError {
    fn from(e: LlmError) -> Self {
        AppError::Backend(e.to_string())
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> AppResult<T>;
}

impl<T, E: Into<AppError>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> AppResult<T> {
        self.map_err(|e| e.into().in_stage(stage))
    }
}
