use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::{ChatRequest, LlmError, TaskKind};
use crate::corpus::CorpusRecord;
use crate::model::LabelId;

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    /// Verbatim model output.
    pub raw: String,
    pub finish_reason: Option<String>,
    pub latency: Duration,
    pub retries: u32,
}

impl ChatResponse {
    pub fn text(raw: impl Into<String>) -> Self {
        ChatResponse {
            raw: raw.into(),
            finish_reason: Some("stop".into()),
            latency: Duration::ZERO,
            retries: 0,
        }
    }
}

/// Anything that can answer a chat request. Implementations must be safe
/// to call from many threads at once.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

pub fn complete(adapter: &dyn ChatBackend, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
    adapter.complete(req)
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(req)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(req)
    }
}

// ------------------------------------------------------------------ live

pub const ENV_ENDPOINT: &str = "RECAP_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "RECAP_LLM_API_KEY";
pub const ENV_MODEL: &str = "RECAP_LLM_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout: Duration,
    pub retry_budget: u32,
    pub max_in_flight: usize,
    /// First retry delay; doubles on each further retry.
    pub backoff: Duration,
}

impl AdapterConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        AdapterConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: ENV_API_KEY.into(),
            timeout: Duration::from_secs(60),
            retry_budget: 3,
            max_in_flight: 8,
            backoff: Duration::from_millis(500),
        }
    }

    pub fn from_env() -> Result<Self, LlmError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| LlmError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o".into());
        Ok(AdapterConfig::new(endpoint, model))
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be at least 1".into()));
        }
        if self.endpoint.is_empty() {
            return Err(LlmError::Config("endpoint is empty".into()));
        }
        Ok(())
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// OpenAI-compatible HTTP backend.
pub struct LiveAdapter {
    config: AdapterConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    slots: Semaphore,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Attempt {
    Retryable(LlmError),
    Fatal(LlmError),
}

impl LiveAdapter {
    pub fn new(config: AdapterConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let slots = Semaphore::new(config.max_in_flight);
        Ok(LiveAdapter {
            config,
            api_key,
            agent,
            slots,
        })
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn attempt(&self, body: &str) -> Result<(String, Option<String>), Attempt> {
        let mut req = self
            .agent
            .post(&self.url())
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => Attempt::Retryable(LlmError::Timeout(self.config.timeout)),
            other => Attempt::Retryable(LlmError::TransportError(other.to_string())),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retryable(LlmError::TransportError(e.to_string())))?;
        if status >= 500 {
            return Err(Attempt::Retryable(LlmError::TransportError(format!(
                "HTTP {status}"
            ))));
        }
        if status >= 400 {
            return Err(Attempt::Fatal(LlmError::TransportError(format!(
                "HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            ))));
        }
        let parsed: CompletionBody = serde_json::from_str(&text).map_err(|e| {
            Attempt::Fatal(LlmError::TransportError(format!("malformed completion body: {e}")))
        })?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Attempt::Fatal(LlmError::TransportError("no choices".into())))?;
        Ok((choice.message.content.unwrap_or_default(), choice.finish_reason))
    }
}

impl ChatBackend for LiveAdapter {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let _permit = self.slots.acquire();
        let mut body = req.to_openai_body();
        if req.model.is_empty() {
            body["model"] = self.config.model.clone().into();
        }
        let body = body.to_string();
        let started = Instant::now();
        let mut delay = self.config.backoff;
        let mut retries = 0;
        loop {
            match self.attempt(&body) {
                Ok((raw, finish_reason)) => {
                    return Ok(ChatResponse {
                        raw,
                        finish_reason,
                        latency: started.elapsed(),
                        retries,
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(e)) => {
                    if retries >= self.config.retry_budget {
                        if self.config.retry_budget == 0 {
                            return Err(e);
                        }
                        return Err(LlmError::BudgetExhausted {
                            attempts: retries + 1,
                            last: e.to_string(),
                        });
                    }
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                    retries += 1;
                }
            }
        }
    }
}

// ------------------------------------------------------------------ mock

#[derive(Debug, Clone)]
struct OracleDoc {
    text: Vec<char>,
    gold: Vec<(usize, usize, LabelId)>,
}

#[derive(Debug, Clone)]
pub enum MockMode {
    /// Scripted responses keyed by request fingerprint.
    Fixture(BTreeMap<String, String>),
    /// Answers derived from gold annotations, keyed by document id.
    Oracle,
}

/// Deterministic offline backend.
#[derive(Debug, Clone)]
pub struct MockAdapter {
    mode: MockMode,
    docs: HashMap<String, OracleDoc>,
}

impl MockAdapter {
    pub fn fixture(responses: BTreeMap<String, String>) -> Self {
        MockAdapter {
            mode: MockMode::Fixture(responses),
            docs: HashMap::new(),
        }
    }

    /// Load a JSON object mapping fingerprint to response text.
    pub fn fixture_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let map: BTreeMap<String, String> = serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Ok(MockAdapter::fixture(map))
    }

    pub fn oracle<'a>(records: impl IntoIterator<Item = &'a CorpusRecord>) -> Self {
        let docs = records
            .into_iter()
            .map(|r| {
                let gold = r
                    .gold
                    .iter()
                    .map(|g| (g.start, g.end, g.label.clone()))
                    .collect();
                (
                    r.id.clone(),
                    OracleDoc {
                        text: r.text.chars().collect(),
                        gold,
                    },
                )
            })
            .collect();
        MockAdapter {
            mode: MockMode::Oracle,
            docs,
        }
    }

    pub fn mode(&self) -> &MockMode {
        &self.mode
    }

    fn oracle_answer(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let ctx = &req.context;
        let doc = self
            .docs
            .get(&ctx.document_id)
            .ok_or_else(|| LlmError::MockMiss(format!("oracle has no document {:?}", ctx.document_id)))?;
        match &ctx.task {
            TaskKind::ExtractUnstructured(label) => {
                let surfaces: Vec<String> = doc
                    .gold
                    .iter()
                    .filter(|(_, _, l)| l == label)
                    .map(|(s, e, _)| doc.text[*s..*e].iter().collect())
                    .collect();
                Ok(serde_json::to_string(&surfaces).expect("strings serialize"))
            }
            TaskKind::Disambiguate => {
                let target = ctx
                    .target
                    .ok_or_else(|| LlmError::MockMiss(req.fingerprint()))?;
                Ok(doc
                    .gold
                    .iter()
                    .find(|(s, e, _)| (*s, *e) == target)
                    .map(|(_, _, l)| l.to_string())
                    .unwrap_or_else(|| "NONE".into()))
            }
            TaskKind::VerifyNumeric => {
                let target = ctx
                    .target
                    .ok_or_else(|| LlmError::MockMiss(req.fingerprint()))?;
                let label = ctx.label.as_ref();
                let hit = doc
                    .gold
                    .iter()
                    .any(|(s, e, l)| (*s, *e) == target && Some(l) == label);
                Ok(if hit { "yes" } else { "no" }.into())
            }
        }
    }
}

impl ChatBackend for MockAdapter {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let raw = match &self.mode {
            MockMode::Fixture(map) => {
                let fp = req.fingerprint();
                map.get(&fp).cloned().ok_or(LlmError::MockMiss(fp))?
            }
            MockMode::Oracle => self.oracle_answer(req)?,
        };
        Ok(ChatResponse::text(raw))
    }
}

/// Wraps a backend and remembers every answer by fingerprint, so a run
/// against one backend can be replayed later as a fixture.
pub struct RecordingAdapter<B> {
    inner: B,
    seen: Mutex<BTreeMap<String, String>>,
}

impl<B: ChatBackend> RecordingAdapter<B> {
    pub fn new(inner: B) -> Self {
        RecordingAdapter {
            inner,
            seen: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn recorded(&self) -> BTreeMap<String, String> {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl<B: ChatBackend> ChatBackend for RecordingAdapter<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let resp = self.inner.complete(req)?;
        self.seen
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(req.fingerprint(), resp.raw.clone());
        Ok(resp)
    }
}
