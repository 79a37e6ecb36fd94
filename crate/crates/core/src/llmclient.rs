//! OpenAI-compatible completion client with an on-disk response cache,
//! retries with exponential backoff and bounded parallel batches.
//!
//! The rendered prompt is sent verbatim as a single user message: chat
//! structure is already baked into the prompt text, so the client never
//! applies a second template.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::jsonl;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("request rejected with status {status}: {body}")]
    Request { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("invalid client configuration: {0}")]
    Config(String),
    #[error("cache error: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub repetition_penalty: f64,
    pub max_new_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.1,
            repetition_penalty: 1.0,
            max_new_tokens: 20,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ClientError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_new_tokens < 1 {
            return Err(ClientError::Config("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EndpointMode {
    /// `POST {base_url}/chat/completions`
    #[default]
    Chat,
    /// `POST {base_url}/completions`
    Completions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub parallelism: usize,
    pub cache_dir: Option<PathBuf>,
    pub endpoint: EndpointMode,
    /// Send `repetition_penalty` as a vendor extension field.
    pub send_repetition_penalty: bool,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "mistral-7b".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 60,
            max_retries: 3,
            parallelism: 4,
            cache_dir: None,
            endpoint: EndpointMode::Chat,
            send_repetition_penalty: true,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.parallelism < 1 {
            return Err(ClientError::Config("parallelism must be >= 1".into()));
        }
        if self.model.trim().is_empty() {
            return Err(ClientError::Config("model must be set".into()));
        }
        Ok(())
    }

    /// Delay before retry number `retry` (1-based). Nondecreasing in `retry`.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub latency_ms: u64,
    pub cached: bool,
    /// Network attempts made; 0 for cache hits.
    pub attempt_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub params: &'a GenerationParams,
}

/// What a single network attempt can produce.
#[derive(Debug, Clone, PartialEq)]
pub enum AttemptError {
    /// Connection failure, timeout, 408, 429 or 5xx.
    Retryable(String),
    Rejected { status: u16, body: String },
    Malformed(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &CompletionRequest<'_>) -> Result<String, AttemptError>;
}

fn classify_status(status: u16, body: String) -> AttemptError {
    if status == 408 || status == 429 || (500..600).contains(&status) {
        AttemptError::Retryable(format!("status {status}: {body}"))
    } else {
        AttemptError::Rejected { status, body }
    }
}

pub struct HttpTransport {
    http: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    endpoint: EndpointMode,
    send_repetition_penalty: bool,
}

impl HttpTransport {
    pub fn new(config: &ClientConfig) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        Ok(HttpTransport {
            http,
            base_url: config.base_url.trim_end_matches('/').to_string(),
            api_key,
            endpoint: config.endpoint,
            send_repetition_penalty: config.send_repetition_penalty,
        })
    }

    fn body(&self, request: &CompletionRequest<'_>) -> Value {
        let mut body = match self.endpoint {
            EndpointMode::Chat => json!({
                "model": request.model,
                "messages": [{"role": "user", "content": request.prompt}],
            }),
            EndpointMode::Completions => json!({
                "model": request.model,
                "prompt": request.prompt,
            }),
        };
        let obj = body.as_object_mut().expect("object literal");
        obj.insert("temperature".into(), json!(request.params.temperature));
        obj.insert("max_tokens".into(), json!(request.params.max_new_tokens));
        obj.insert("n".into(), json!(1));
        obj.insert("stream".into(), json!(false));
        if self.send_repetition_penalty {
            obj.insert(
                "repetition_penalty".into(),
                json!(request.params.repetition_penalty),
            );
        }
        body
    }

    fn extract(&self, body: &Value) -> Option<String> {
        let choice = body.get("choices")?.get(0)?;
        let text = match self.endpoint {
            EndpointMode::Chat => choice.get("message")?.get("content")?,
            EndpointMode::Completions => choice.get("text")?,
        };
        text.as_str().map(str::to_string)
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &CompletionRequest<'_>) -> Result<String, AttemptError> {
        let path = match self.endpoint {
            EndpointMode::Chat => "chat/completions",
            EndpointMode::Completions => "completions",
        };
        let mut builder = self
            .http
            .post(format!("{}/{}", self.base_url, path))
            .json(&self.body(request));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, text));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| AttemptError::Malformed(e.to_string()))?;
        self.extract(&value)
            .ok_or_else(|| AttemptError::Malformed(format!("no completion text in {text}")))
    }
}

/// Deterministic in-process endpoint. Exact prompt matches win; otherwise
/// the substring rule whose needle occurs latest in the prompt answers, so a
/// query after one-shot exemplars matches its own rule.
#[derive(Debug, Default)]
pub struct MockTransport {
    responses: HashMap<String, String>,
    rules: Vec<(String, String)>,
    fallback: Option<String>,
    poisoned: HashSet<String>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    delay: Duration,
}

impl MockTransport {
    pub fn new<I, P, R>(responses: I) -> Self
    where
        I: IntoIterator<Item = (P, R)>,
        P: Into<String>,
        R: Into<String>,
    {
        MockTransport {
            responses: responses
                .into_iter()
                .map(|(p, r)| (p.into(), r.into()))
                .collect(),
            ..MockTransport::default()
        }
    }

    pub fn with_rule(mut self, needle: impl Into<String>, text: impl Into<String>) -> Self {
        self.rules.push((needle.into(), text.into()));
        self
    }

    /// Reads `{prompt | contains, response}` JSONL lines.
    pub fn from_file(path: &Path) -> Result<Self, ClientError> {
        let entries: Vec<MockEntry> =
            jsonl::read_jsonl(path).map_err(|e| ClientError::Config(e.to_string()))?;
        let mut mock = MockTransport::default();
        for (i, entry) in entries.into_iter().enumerate() {
            match (entry.prompt, entry.contains) {
                (Some(p), None) => {
                    mock.responses.insert(p, entry.response);
                }
                (None, Some(c)) => mock.rules.push((c, entry.response)),
                _ => {
                    return Err(ClientError::Config(format!(
                        "{}: entry {}: exactly one of prompt or contains is required",
                        path.display(),
                        i + 1
                    )))
                }
            }
        }
        Ok(mock)
    }

    fn lookup(&self, prompt: &str) -> Option<&String> {
        self.responses.get(prompt).or_else(|| {
            self.rules
                .iter()
                .filter_map(|(needle, text)| prompt.rfind(needle.as_str()).map(|pos| (pos, text)))
                .max_by_key(|(pos, _)| *pos)
                .map(|(_, text)| text)
        })
    }

    /// Response for prompts with no explicit entry. Without one, unknown
    /// prompts are rejected with status 404.
    pub fn with_fallback(mut self, text: impl Into<String>) -> Self {
        self.fallback = Some(text.into());
        self
    }

    /// Prompts that always fail with a non-retryable rejection.
    pub fn with_poisoned<I: IntoIterator<Item = String>>(mut self, prompts: I) -> Self {
        self.poisoned.extend(prompts);
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

impl Transport for MockTransport {
    fn send(&self, request: &CompletionRequest<'_>) -> Result<String, AttemptError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let result = if self.poisoned.contains(request.prompt) {
            Err(AttemptError::Rejected {
                status: 400,
                body: "poisoned prompt".into(),
            })
        } else {
            self.lookup(request.prompt)
                .or(self.fallback.as_ref())
                .cloned()
                .ok_or_else(|| AttemptError::Rejected {
                    status: 404,
                    body: "no mock response for prompt".into(),
                })
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

#[derive(Debug, Deserialize)]
struct MockEntry {
    #[serde(default)]
    prompt: Option<String>,
    #[serde(default)]
    contains: Option<String>,
    response: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheFile {
    model: String,
    prompt: String,
    params: GenerationParams,
    text: String,
}

/// Content-addressed response store; one JSON file per hex SHA-256 key.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, ClientError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .map_err(|e| ClientError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(model: &str, prompt: &str, params: &GenerationParams) -> String {
        let canonical = json!({
            "model": model,
            "prompt": prompt,
            "params": {
                "temperature": params.temperature,
                "repetition_penalty": params.repetition_penalty,
                "max_new_tokens": params.max_new_tokens,
            },
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, request: &CompletionRequest<'_>) -> Option<String> {
        let key = Self::key(request.model, request.prompt, request.params);
        let bytes = std::fs::read(self.path(&key)).ok()?;
        let file: CacheFile = serde_json::from_slice(&bytes).ok()?;
        (file.model == request.model
            && file.prompt == request.prompt
            && file.params == *request.params)
            .then_some(file.text)
    }

    pub fn put(&self, request: &CompletionRequest<'_>, text: &str) -> Result<(), ClientError> {
        let key = Self::key(request.model, request.prompt, request.params);
        let file = CacheFile {
            model: request.model.to_string(),
            prompt: request.prompt.to_string(),
            params: *request.params,
            text: text.to_string(),
        };
        let bytes = serde_json::to_vec(&file).map_err(|e| ClientError::Cache(e.to_string()))?;
        jsonl::write_atomic(&self.path(&key), &bytes).map_err(|e| ClientError::Cache(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{} of {total} requests failed (indices {:?})", .failures.len(), self.indices())]
pub struct BatchError {
    pub total: usize,
    pub failures: Vec<(usize, ClientError)>,
}

impl BatchError {
    pub fn indices(&self) -> Vec<usize> {
        self.failures.iter().map(|(i, _)| *i).collect()
    }
}

/// Per-prompt outcomes, aligned with the input order.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub results: Vec<Result<Completion, ClientError>>,
}

impl BatchOutcome {
    pub fn failed_indices(&self) -> Vec<usize> {
        self.results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.is_err().then_some(i))
            .collect()
    }

    pub fn error_report(&self) -> Option<BatchError> {
        let failures: Vec<_> = self
            .results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e.clone())))
            .collect();
        (!failures.is_empty()).then_some(BatchError {
            total: self.results.len(),
            failures,
        })
    }
}

#[derive(Clone)]
pub struct LlmClient {
    transport: Arc<dyn Transport>,
    config: ClientConfig,
    cache: Option<ResponseCache>,
}

impl LlmClient {
    pub fn new(transport: Arc<dyn Transport>, config: ClientConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let cache = config.cache_dir.clone().map(ResponseCache::new).transpose()?;
        Ok(LlmClient {
            transport,
            config,
            cache,
        })
    }

    pub fn http(config: ClientConfig) -> Result<Self, ClientError> {
        let transport = Arc::new(HttpTransport::new(&config)?);
        LlmClient::new(transport, config)
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<Completion, ClientError> {
        params.validate()?;
        let started = Instant::now();
        let request = CompletionRequest {
            model: &self.config.model,
            prompt,
            params,
        };
        if let Some(text) = self.cache.as_ref().and_then(|c| c.get(&request)) {
            return Ok(Completion {
                text,
                latency_ms: started.elapsed().as_millis() as u64,
                cached: true,
                attempt_count: 0,
            });
        }

        let mut attempt = 0u32;
        let text = loop {
            attempt += 1;
            match self.transport.send(&request) {
                Ok(text) => break text,
                Err(AttemptError::Retryable(message)) => {
                    if attempt > self.config.max_retries {
                        return Err(ClientError::Transport {
                            attempts: attempt,
                            message,
                        });
                    }
                    let delay = self.config.backoff(attempt);
                    log::debug!("attempt {attempt} failed ({message}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
                Err(AttemptError::Rejected { status, body }) => {
                    return Err(ClientError::Request { status, body })
                }
                Err(AttemptError::Malformed(m)) => return Err(ClientError::Protocol(m)),
            }
        };
        if let Some(cache) = &self.cache {
            cache.put(&request, &text)?;
        }
        Ok(Completion {
            text,
            latency_ms: started.elapsed().as_millis() as u64,
            cached: false,
            attempt_count: attempt,
        })
    }

    /// Runs prompts on at most `parallelism` worker threads. Failures stay in
    /// place; they never abort the rest of the batch.
    pub fn complete_batch<S: AsRef<str> + Sync>(
        &self,
        prompts: &[S],
        params: &GenerationParams,
    ) -> BatchOutcome {
        let workers = self.config.parallelism.min(prompts.len()).max(1);
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<Completion, ClientError>>>> =
            Mutex::new(vec![None; prompts.len()]);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= prompts.len() {
                        break;
                    }
                    let result = self.complete(prompts[i].as_ref(), params);
                    slots.lock().expect("batch slots poisoned")[i] = Some(result);
                });
            }
        });
        let results = slots
            .into_inner()
            .expect("batch slots poisoned")
            .into_iter()
            .map(|r| r.expect("every index is visited"))
            .collect();
        BatchOutcome { results }
    }
}

/// Client for OpenAI-compatible `POST {base_url}/embeddings`.
pub struct EmbeddingClient {
    http: reqwest::blocking::Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff: ClientConfig,
}

impl EmbeddingClient {
    pub fn new(base_url: &str, model: &str, config: &ClientConfig) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(EmbeddingClient {
            http,
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key: config
                .api_key_env
                .as_deref()
                .and_then(|v| std::env::var(v).ok())
                .filter(|k| !k.is_empty()),
            max_retries: config.max_retries,
            backoff: config.clone(),
        })
    }

    fn attempt(&self, inputs: &[String]) -> Result<Vec<Vec<f64>>, AttemptError> {
        let mut builder = self
            .http
            .post(format!("{}/embeddings", self.base_url))
            .json(&json!({"model": self.model, "input": inputs}));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, text));
        }
        #[derive(Deserialize)]
        struct Item {
            index: Option<usize>,
            embedding: Vec<f64>,
        }
        #[derive(Deserialize)]
        struct Body {
            data: Vec<Item>,
        }
        let body: Body =
            serde_json::from_str(&text).map_err(|e| AttemptError::Malformed(e.to_string()))?;
        if body.data.len() != inputs.len() {
            return Err(AttemptError::Malformed(format!(
                "expected {} embeddings, got {}",
                inputs.len(),
                body.data.len()
            )));
        }
        let mut out = vec![Vec::new(); inputs.len()];
        for (pos, item) in body.data.into_iter().enumerate() {
            let i = item.index.unwrap_or(pos);
            if i >= out.len() {
                return Err(AttemptError::Malformed(format!("embedding index {i} out of range")));
            }
            out[i] = item.embedding;
        }
        Ok(out)
    }

    pub fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f64>>, ClientError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(inputs) {
                Ok(v) => return Ok(v),
                Err(AttemptError::Retryable(message)) if attempt > self.max_retries => {
                    return Err(ClientError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(AttemptError::Retryable(_)) => std::thread::sleep(self.backoff.backoff(attempt)),
                Err(AttemptError::Rejected { status, body }) => {
                    return Err(ClientError::Request { status, body })
                }
                Err(AttemptError::Malformed(m)) => return Err(ClientError::Protocol(m)),
            }
        }
    }
}
