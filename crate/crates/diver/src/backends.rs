//! Offline completion backends: scripted mocks and cassette record/replay.

use std::collections::{HashMap, VecDeque};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use diver_core::llm::{Completion, CompletionRequest, LlmError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};
use crate::jsonl::read_records;

/// Hex SHA-256 of a prompt.
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug)]
enum Script {
    Queue(VecDeque<String>),
    Digest { map: HashMap<String, String>, fallback: Option<String> },
}

/// Deterministic stand-in for a completion service.
///
/// Queue mode serves canned responses in order and fails once they run out.
/// Digest mode answers by prompt digest, with an optional fallback reply.
#[derive(Debug)]
pub struct MockScript {
    script: Mutex<Script>,
    served: Mutex<usize>,
}

#[derive(Debug, Deserialize)]
struct ScriptLine {
    #[serde(default)]
    digest: Option<String>,
    #[serde(default)]
    prompt: Option<String>,
    response: String,
}

impl MockScript {
    pub fn queue<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(Script::Queue(responses.into_iter().map(Into::into).collect()))
    }

    /// Maps prompts (not digests) to responses.
    pub fn by_prompt<I, P, S>(pairs: I, fallback: Option<String>) -> Self
    where
        I: IntoIterator<Item = (P, S)>,
        P: AsRef<str>,
        S: Into<String>,
    {
        let map = pairs.into_iter().map(|(p, s)| (prompt_digest(p.as_ref()), s.into())).collect();
        Self::new(Script::Digest { map, fallback })
    }

    pub fn by_digest(map: HashMap<String, String>, fallback: Option<String>) -> Self {
        Self::new(Script::Digest { map, fallback })
    }

    /// Loads a script file. Lines carrying `digest` or `prompt` build a digest
    /// map; lines with only `response` build a queue. Mixing both is an error.
    pub fn load(path: &Path, fallback: Option<String>) -> AppResult<Self> {
        let lines: Vec<ScriptLine> = read_records(path)?;
        let keyed = lines.iter().filter(|l| l.digest.is_some() || l.prompt.is_some()).count();
        if keyed == 0 {
            return Ok(Self::queue(lines.into_iter().map(|l| l.response)));
        }
        if keyed != lines.len() {
            return Err(AppError::Config(format!("{}: mock script mixes keyed and queued responses", path.display())));
        }
        let map = lines
            .into_iter()
            .map(|l| (l.digest.unwrap_or_else(|| prompt_digest(l.prompt.as_deref().unwrap_or_default())), l.response))
            .collect();
        Ok(Self::by_digest(map, fallback))
    }

    fn new(script: Script) -> Self {
        Self { script: Mutex::new(script), served: Mutex::new(0) }
    }

    /// Responses handed out so far.
    pub fn served(&self) -> usize {
        *self.served.lock().expect("mock lock")
    }
}

impl Completion for MockScript {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        if request.prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let mut served = self.served.lock().expect("mock lock");
        let reply = match &mut *self.script.lock().expect("mock lock") {
            Script::Queue(q) => q.pop_front().ok_or(LlmError::ScriptExhausted { served: *served })?,
            Script::Digest { map, fallback } => {
                let d = prompt_digest(&request.prompt);
                map.get(&d).or(fallback.as_ref()).cloned().ok_or(LlmError::UnscriptedPrompt(d))?
            }
        };
        *served += 1;
        Ok(reply)
    }
}

/// Completion backend driven by a closure. Handy for rule-based test doubles.
pub struct FnCompletion<F>(pub F);

impl<F> Completion for FnCompletion<F>
where
    F: Fn(&CompletionRequest) -> Result<String, LlmError>,
{
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (self.0)(request)
    }
}

/// One recorded exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub digest: String,
    pub prompt: String,
    pub response: String,
    pub latency_ms: u64,
    #[serde(default)]
    pub run_id: String,
}

/// Writes every exchange of the wrapped backend to a JSONL cassette.
pub struct Recorder<B> {
    inner: B,
    path: PathBuf,
    run_id: String,
    file: Mutex<std::fs::File>,
}

impl<B: Completion> Recorder<B> {
    pub fn new(inner: B, path: &Path, run_id: impl Into<String>) -> AppResult<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| AppError::io(path, e))?;
        Ok(Self { inner, path: path.to_path_buf(), run_id: run_id.into(), file: Mutex::new(file) })
    }
}

impl<B: Completion> Completion for Recorder<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let start = Instant::now();
        let response = self.inner.complete(request)?;
        let entry = CassetteEntry {
            digest: prompt_digest(&request.prompt),
            prompt: request.prompt.clone(),
            response: response.clone(),
            latency_ms: start.elapsed().as_millis() as u64,
            run_id: self.run_id.clone(),
        };
        let mut line = serde_json::to_string(&entry).map_err(|e| LlmError::Protocol(e.to_string()))?;
        line.push('\n');
        self.file
            .lock()
            .expect("cassette lock")
            .write_all(line.as_bytes())
            .map_err(|e| LlmError::Config(format!("{}: {e}", self.path.display())))?;
        log::debug!("run={} recorded {}", self.run_id, entry.digest);
        Ok(response)
    }
}

/// Serves responses from a cassette without touching the network. Repeated
/// prompts get their recorded responses in recording order.
#[derive(Debug)]
pub struct Replayer {
    entries: Mutex<HashMap<String, VecDeque<String>>>,
}

impl Replayer {
    pub fn load(path: &Path) -> AppResult<Self> {
        let mut entries: HashMap<String, VecDeque<String>> = HashMap::new();
        for e in read_records::<CassetteEntry>(path)? {
            entries.entry(e.digest).or_default().push_back(e.response);
        }
        Ok(Self { entries: Mutex::new(entries) })
    }
}

impl Completion for Replayer {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let d = prompt_digest(&request.prompt);
        let mut entries = self.entries.lock().expect("cassette lock");
        let q = entries.get_mut(&d).ok_or_else(|| LlmError::UnscriptedPrompt(d.clone()))?;
        // The last recorded answer keeps serving once earlier ones are used.
        if q.len() > 1 {
            Ok(q.pop_front().expect("non-empty"))
        } else {
            q.front().cloned().ok_or(LlmError::UnscriptedPrompt(d))
        }
    }
}
