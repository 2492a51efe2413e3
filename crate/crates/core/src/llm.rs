//! Completion-service contract shared by expansion, reranking and curation.

use alloc::string::String;

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Empty means "the backend's configured model".
    pub model_id: String,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), temperature: 0.0, max_output_tokens: 1024, model_id: String::new() }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn model(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("context length exceeded: {0}")]
    ContextLength(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("scripted responses exhausted after {served} calls")]
    ScriptExhausted { served: usize },
    #[error("no scripted response for prompt digest {0}")]
    UnscriptedPrompt(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
}

/// A text-completion backend.
pub trait Completion {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

impl<T: Completion + ?Sized> Completion for &T {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

impl<T: Completion + ?Sized> Completion for alloc::boxed::Box<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}
