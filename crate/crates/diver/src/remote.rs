//! HTTP clients for a chat-completions endpoint and an embeddings endpoint.
//!
//! Transient failures (connect errors, timeouts, 408, 429, 5xx) are retried
//! with exponential backoff and jitter. Authentication failures and
//! context-length rejections are reported at once as distinct errors.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use diver_core::dense::{Embedder, EmbeddingVector};
use diver_core::llm::{Completion, CompletionRequest, LlmError};
use rand::Rng;
use serde_json::{json, Value};

pub const LLM_URL_VAR: &str = "DIVER_LLM_URL";
pub const LLM_KEY_VAR: &str = "DIVER_LLM_API_KEY";
pub const LLM_MODEL_VAR: &str = "DIVER_LLM_MODEL";
pub const EMBED_URL_VAR: &str = "DIVER_EMBED_URL";
pub const EMBED_KEY_VAR: &str = "DIVER_EMBED_API_KEY";
pub const EMBED_MODEL_VAR: &str = "DIVER_EMBED_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    /// Each delay is stretched by a random factor in `[1, 1 + jitter)`.
    pub jitter: f64,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_secs(1), jitter: 0.5, timeout: Duration::from_secs(120) }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << (retry - 1).min(16));
        let stretch = if self.jitter > 0.0 { rand::rng().random_range(1.0..1.0 + self.jitter) } else { 1.0 };
        exp.mul_f64(stretch)
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self { free: Mutex::new(permits.max(1)), cv: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore lock") += 1;
        self.0.cv.notify_one();
    }
}

enum Failure {
    Transient(String),
    Fatal(LlmError),
}

fn looks_like_context_overflow(body: &str) -> bool {
    let b = body.to_ascii_lowercase();
    b.contains("context_length")
        || (b.contains("context") && (b.contains("length") || b.contains("too long") || b.contains("maximum")))
}

/// Shared POST-with-retry machinery.
pub struct HttpCaller {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    policy: RetryPolicy,
    sleeper: Sleeper,
    gate: Arc<Semaphore>,
    run_id: String,
}

impl HttpCaller {
    pub fn new(url: impl Into<String>, api_key: Option<String>, policy: RetryPolicy) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(policy.timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            client,
            url: url.into(),
            api_key,
            policy,
            sleeper: Arc::new(std::thread::sleep),
            gate: Arc::new(Semaphore::new(8)),
            run_id: String::new(),
        })
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.gate = Arc::new(Semaphore::new(n));
        self
    }

    pub fn with_run_id(mut self, run_id: impl Into<String>) -> Self {
        self.run_id = run_id.into();
        self
    }

    fn attempt(&self, body: &Value) -> Result<Value, Failure> {
        let _permit = self.gate.acquire();
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| Failure::Transient(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text).map_err(|e| Failure::Fatal(LlmError::Protocol(e.to_string()))),
            401 | 403 => Err(Failure::Fatal(LlmError::Auth(format!("HTTP {status}: {text}")))),
            400 | 413 | 422 if looks_like_context_overflow(&text) => {
                Err(Failure::Fatal(LlmError::ContextLength(format!("HTTP {status}: {text}"))))
            }
            408 | 429 | 500..=599 => Err(Failure::Transient(format!("HTTP {status}: {text}"))),
            _ => Err(Failure::Fatal(LlmError::Protocol(format!("HTTP {status}: {text}")))),
        }
    }

    pub fn post(&self, body: &Value) -> Result<Value, LlmError> {
        let max = self.policy.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max {
            match self.attempt(body) {
                Ok(v) => {
                    log::info!("run={} url={} attempt={attempt} ok", self.run_id, self.url);
                    return Ok(v);
                }
                Err(Failure::Fatal(e)) => {
                    log::error!("run={} url={} attempt={attempt} fatal: {e}", self.run_id, self.url);
                    return Err(e);
                }
                Err(Failure::Transient(why)) => {
                    log::warn!("run={} url={} attempt={attempt}/{max} failed: {why}", self.run_id, self.url);
                    last = why;
                    if attempt < max {
                        (self.sleeper)(self.policy.backoff(attempt));
                    }
                }
            }
        }
        Err(LlmError::RetriesExhausted { attempts: max, last })
    }
}

fn env(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|v| !v.trim().is_empty())
}

/// Chat-completions client: `{"model", "messages", "temperature",
/// "max_tokens"}` in, `choices[0].message.content` out.
pub struct ChatClient {
    http: HttpCaller,
    model: String,
}

impl ChatClient {
    pub fn new(http: HttpCaller, model: impl Into<String>) -> Self {
        Self { http, model: model.into() }
    }

    /// Reads the endpoint, key and model from `DIVER_LLM_URL`,
    /// `DIVER_LLM_API_KEY` and `DIVER_LLM_MODEL`.
    pub fn from_env(policy: RetryPolicy) -> Result<Self, LlmError> {
        let url = env(LLM_URL_VAR).ok_or_else(|| LlmError::Config(format!("{LLM_URL_VAR} is not set")))?;
        let model = env(LLM_MODEL_VAR).unwrap_or_default();
        Ok(Self::new(HttpCaller::new(url, env(LLM_KEY_VAR), policy)?, model))
    }

    pub fn http_mut(&mut self) -> &mut HttpCaller {
        &mut self.http
    }
}

impl Completion for ChatClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        if request.prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let model = if request.model_id.is_empty() { &self.model } else { &request.model_id };
        let body = json!({
            "model": model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let v = self.http.post(&body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::Protocol("response lacks choices[0].message.content".into()))
    }
}

/// Embeddings client: `{"model", "input": [..]}` in,
/// `{"data": [{"index", "embedding"}]}` out. Vectors are L2-normalized.
pub struct RemoteEmbedder {
    http: HttpCaller,
    model: String,
    dimension: usize,
    batch_size: usize,
}

impl RemoteEmbedder {
    pub fn new(http: HttpCaller, model: impl Into<String>, dimension: usize) -> Self {
        Self { http, model: model.into(), dimension, batch_size: 32 }
    }

    pub fn from_env(policy: RetryPolicy, dimension: usize) -> Result<Self, LlmError> {
        let url = env(EMBED_URL_VAR).ok_or_else(|| LlmError::Config(format!("{EMBED_URL_VAR} is not set")))?;
        let model = env(EMBED_MODEL_VAR).unwrap_or_default();
        Ok(Self::new(HttpCaller::new(url, env(EMBED_KEY_VAR), policy)?, model, dimension))
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    fn embed_chunk(&self, inputs: &[String]) -> Result<Vec<EmbeddingVector>, diver_core::Error> {
        let fail = |m: String| diver_core::Error::Embedder(m);
        let v = self.http.post(&json!({"model": self.model, "input": inputs})).map_err(|e| fail(e.to_string()))?;
        let data = v.get("data").and_then(Value::as_array).ok_or_else(|| fail("response lacks `data`".into()))?;
        let mut slots: Vec<Option<EmbeddingVector>> = vec![None; inputs.len()];
        for item in data {
            let index = item.get("index").and_then(Value::as_u64).ok_or_else(|| fail("item lacks `index`".into()))?;
            let values: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| fail("item lacks `embedding`".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| fail("embedding holds a non-number".into())))
                .collect::<Result<_, _>>()?;
            if values.len() != self.dimension {
                return Err(diver_core::Error::DimensionMismatch { expected: self.dimension, found: values.len() });
            }
            let slot = slots.get_mut(index as usize).ok_or_else(|| fail(format!("index {index} out of range")))?;
            *slot = Some(EmbeddingVector::normalized(values)?);
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| fail(format!("no embedding returned for input {i}"))))
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[&str], instruction: Option<&str>) -> diver_core::Result<Vec<EmbeddingVector>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(diver_core::Error::Empty("text to embed"));
        }
        let inputs: Vec<String> = texts.iter().map(|t| format!("{}{t}", instruction.unwrap_or(""))).collect();
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(self.batch_size) {
            out.extend(self.embed_chunk(chunk)?);
        }
        Ok(out)
    }
}
