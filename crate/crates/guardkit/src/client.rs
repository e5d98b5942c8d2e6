//! Pluggable model backends: an OpenAI-compatible HTTP chat-completions
//! client with image payloads, retry, and rate/concurrency limits, plus a
//! deterministic mock backend so every test and example runs offline.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::Engine;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, Semaphore};

use crate::error::{Error, Result};
use crate::manifest::SafetyLabel;

/// Base64 image content with its media type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub media_type: String,
    pub base64_data: String,
}

impl ImagePayload {
    pub fn data_url(&self) -> String {
        format!("data:{};base64,{}", self.media_type, self.base64_data)
    }

    pub fn decode(&self) -> Result<Vec<u8>> {
        base64::engine::general_purpose::STANDARD
            .decode(&self.base64_data)
            .map_err(|e| Error::Input(format!("invalid base64 payload: {e}")))
    }
}

/// Where an image comes from. Paths are resolved lazily by the HTTP backend;
/// mocks never dereference them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageSource {
    Path(PathBuf),
    Url(String),
    Payload(ImagePayload),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessagePart {
    Text(String),
    Image(ImageSource),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: MessageRole,
    pub parts: Vec<MessagePart>,
}

/// Decoding parameters. Evaluation defaults to temperature 0 for determinism;
/// GRPO sampling uses temperature > 0 and n_samples = group size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
    pub n_samples: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self { temperature: 0.0, max_tokens: 1024, n_samples: 1 }
    }
}

/// One single-turn request: policy prompt plus image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub decoding: Decoding,
    /// Opaque routing tag (e.g. "sample_id|policy_id"); the oracle mock uses
    /// it to look up ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<()> {
        if !self.messages.iter().any(|m| m.role == MessageRole::User) {
            return Err(Error::Input("request must contain a user message".into()));
        }
        if self.decoding.n_samples < 1 {
            return Err(Error::Input("n_samples must be >= 1".into()));
        }
        if self.decoding.temperature < 0.0 {
            return Err(Error::Input("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub completions: Vec<String>,
    pub usage: Usage,
    pub backend_id: String,
    pub latency: Duration,
}

/// Configuration for an HTTP backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_retry_backoff_ms")]
    pub retry_backoff_ms: u64,
    /// Refuse to encode images larger than this many bytes.
    #[serde(default = "default_max_image_bytes")]
    pub max_image_bytes: u64,
}

fn default_timeout_secs() -> u64 { 120 }
fn default_max_retries() -> u32 { 3 }
fn default_max_concurrency() -> usize { 4 }
fn default_retry_backoff_ms() -> u64 { 500 }
fn default_max_image_bytes() -> u64 { 20 * 1024 * 1024 }

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency < 1 {
            return Err(Error::Input("max_concurrency must be >= 1".into()));
        }
        if self.timeout_secs == 0 {
            return Err(Error::Input("timeout must be > 0".into()));
        }
        Ok(())
    }
}

/// A model backend. Implementations must be safe to call from many
/// concurrent tasks.
#[async_trait]
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    /// One attempt; retries and limits are applied by [`BackendRunner`].
    async fn complete_once(&self, request: &ChatRequest) -> Result<ChatResponse>;
}

/// Sniff the media type from magic bytes, falling back to the extension.
fn sniff_media_type(bytes: &[u8], path: &Path) -> String {
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        return "image/png".into();
    }
    if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        return "image/jpeg".into();
    }
    if bytes.starts_with(b"GIF8") {
        return "image/gif".into();
    }
    if bytes.len() >= 12 && &bytes[0..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
        return "image/webp".into();
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png".into(),
        Some("jpg") | Some("jpeg") => "image/jpeg".into(),
        _ => "application/octet-stream".into(),
    }
}

/// Read and base64-encode an image file. Deterministic for identical bytes.
pub fn encode_image(image_ref: &Path, max_bytes: u64) -> Result<ImagePayload> {
    let metadata = std::fs::metadata(image_ref)
        .map_err(|e| Error::Input(format!("cannot read image `{}`: {e}", image_ref.display())))?;
    if metadata.len() > max_bytes {
        return Err(Error::Input(format!(
            "image `{}` is {} bytes, over the {} byte cap",
            image_ref.display(),
            metadata.len(),
            max_bytes
        )));
    }
    let bytes = std::fs::read(image_ref)
        .map_err(|e| Error::Input(format!("cannot read image `{}`: {e}", image_ref.display())))?;
    Ok(ImagePayload {
        media_type: sniff_media_type(&bytes, image_ref),
        base64_data: base64::engine::general_purpose::STANDARD.encode(&bytes),
    })
}

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP backend
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct WireContentImageUrl<'a> {
    url: &'a str,
}

#[derive(Serialize)]
#[serde(tag = "type")]
enum WireContent<'a> {
    #[serde(rename = "text")]
    Text { text: &'a str },
    #[serde(rename = "image_url")]
    ImageUrl { image_url: WireContentImageUrl<'a> },
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: Vec<WireContent<'a>>,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    n: u32,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

/// OpenAI-compatible chat-completions backend with data-URL image parts.
pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::Client,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Input(format!("http client: {e}")))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// Resolve image sources to data URLs and build the wire JSON body.
    fn build_body(&self, request: &ChatRequest) -> Result<serde_json::Value> {
        let mut resolved: Vec<(String, Vec<(Option<String>, Option<String>)>)> = Vec::new();
        for message in &request.messages {
            let role = match message.role {
                MessageRole::System => "system".to_string(),
                MessageRole::User => "user".to_string(),
            };
            let mut parts = Vec::new();
            for part in &message.parts {
                match part {
                    MessagePart::Text(text) => parts.push((Some(text.clone()), None)),
                    MessagePart::Image(source) => {
                        let url = match source {
                            ImageSource::Payload(payload) => payload.data_url(),
                            ImageSource::Url(url) => url.clone(),
                            ImageSource::Path(path) => {
                                encode_image(path, self.config.max_image_bytes)?.data_url()
                            }
                        };
                        parts.push((None, Some(url)));
                    }
                }
            }
            resolved.push((role, parts));
        }
        let messages: Vec<WireMessage> = resolved
            .iter()
            .map(|(role, parts)| WireMessage {
                role,
                content: parts
                    .iter()
                    .map(|(text, url)| match (text, url) {
                        (Some(text), _) => WireContent::Text { text },
                        (_, Some(url)) => WireContent::ImageUrl {
                            image_url: WireContentImageUrl { url },
                        },
                        _ => unreachable!(),
                    })
                    .collect(),
            })
            .collect();
        let wire = WireRequest {
            model: &self.config.model,
            messages,
            temperature: request.decoding.temperature,
            max_tokens: request.decoding.max_tokens,
            n: request.decoding.n_samples,
        };
        Ok(serde_json::to_value(&wire)?)
    }
}

#[async_trait]
impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.config.backend_id
    }

    async fn complete_once(&self, request: &ChatRequest) -> Result<ChatResponse> {
        request.validate()?;
        let body = self.build_body(request)?;
        let start = Instant::now();
        let mut http = self.client.post(&self.config.endpoint).json(&body);
        if let Some(env_name) = &self.config.auth_token_env {
            if let Ok(token) = std::env::var(env_name) {
                http = http.bearer_auth(token);
            }
        }
        let response = http.send().await.map_err(|e| Error::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = response.status();
        if status.is_client_error() {
            let text = response.text().await.unwrap_or_default();
            return Err(Error::Permanent { status: status.as_u16(), message: text });
        }
        if !status.is_success() {
            let text = response.text().await.unwrap_or_default();
            return Err(Error::Transport {
                attempts: 1,
                message: format!("status {status}: {text}"),
            });
        }
        let parsed: WireResponse = response.json().await.map_err(|e| Error::Transport {
            attempts: 1,
            message: format!("malformed response body: {e}"),
        })?;
        let completions: Vec<String> =
            parsed.choices.into_iter().map(|c| c.message.content).collect();
        if completions.len() != request.decoding.n_samples as usize {
            return Err(Error::Transport {
                attempts: 1,
                message: format!(
                    "expected {} completions, got {}",
                    request.decoding.n_samples,
                    completions.len()
                ),
            });
        }
        let usage = parsed.usage.unwrap_or_default();
        Ok(ChatResponse {
            completions,
            usage: Usage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
            backend_id: self.config.backend_id.clone(),
            latency: start.elapsed(),
        })
    }
}

// ---------------------------------------------------------------------------
// Mock backend
// ---------------------------------------------------------------------------

/// Behavior of the offline mock backend.
pub enum MockMode {
    /// Echo the ground-truth label looked up by the request tag.
    Oracle(HashMap<String, SafetyLabel>),
    AlwaysSafe,
    AlwaysUnsafe,
    /// Return scripted texts in order, one per completion slot.
    Scripted(Vec<String>),
    /// Fail with a transport error for the first `fail_first` attempts of the
    /// backend's lifetime, then behave like AlwaysSafe.
    Flaky { fail_first: usize },
    /// Refuse every request with the given refusal text.
    Refusing(String),
}

/// Deterministic offline backend with attempt/concurrency instrumentation.
pub struct MockBackend {
    backend_id: String,
    mode: MockMode,
    /// Artificial per-call latency, for concurrency assertions.
    pub call_delay: Duration,
    attempts: AtomicUsize,
    scripted_cursor: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl MockBackend {
    pub fn new(backend_id: impl Into<String>, mode: MockMode) -> Self {
        Self {
            backend_id: backend_id.into(),
            mode,
            call_delay: Duration::ZERO,
            attempts: AtomicUsize::new(0),
            scripted_cursor: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.call_delay = delay;
        self
    }

    /// Oracle over a manifest: tag format "sample_id|policy_id".
    pub fn oracle_for(manifest: &crate::manifest::DatasetManifest) -> Self {
        let mut truths = HashMap::new();
        for sample in &manifest.samples {
            for (policy_id, label) in &sample.labels {
                truths.insert(format!("{}|{}", sample.sample_id, policy_id), *label);
            }
        }
        Self::new("mock-oracle", MockMode::Oracle(truths))
    }

    /// Total attempts observed, including failed ones.
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }

    /// Highest concurrent in-flight count observed.
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.backend_id
    }

    async fn complete_once(&self, request: &ChatRequest) -> Result<ChatResponse> {
        request.validate()?;
        let attempt = self.attempts.fetch_add(1, Ordering::SeqCst);
        let current = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(current, Ordering::SeqCst);
        if !self.call_delay.is_zero() {
            tokio::time::sleep(self.call_delay).await;
        }
        let result = (|| {
            let n = request.decoding.n_samples as usize;
            let completions: Vec<String> = match &self.mode {
                MockMode::Oracle(truths) => {
                    let tag = request.tag.as_deref().ok_or_else(|| {
                        Error::Input("oracle mock requires a request tag".into())
                    })?;
                    let truth = truths
                        .get(tag)
                        .ok_or_else(|| Error::Input(format!("no ground truth for tag `{tag}`")))?;
                    vec![truth.to_string(); n]
                }
                MockMode::AlwaysSafe => vec!["safe".to_string(); n],
                MockMode::AlwaysUnsafe => vec!["unsafe".to_string(); n],
                MockMode::Scripted(texts) => {
                    let start = self.scripted_cursor.fetch_add(n, Ordering::SeqCst);
                    (0..n)
                        .map(|i| {
                            texts
                                .get((start + i) % texts.len())
                                .cloned()
                                .expect("scripted texts non-empty")
                        })
                        .collect()
                }
                MockMode::Flaky { fail_first } => {
                    if attempt < *fail_first {
                        return Err(Error::Transport {
                            attempts: 1,
                            message: "scripted transient failure".into(),
                        });
                    }
                    vec!["safe".to_string(); n]
                }
                MockMode::Refusing(text) => vec![text.clone(); n],
            };
            Ok(ChatResponse {
                completions,
                usage: Usage::default(),
                backend_id: self.backend_id.clone(),
                latency: self.call_delay,
            })
        })();
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

// ---------------------------------------------------------------------------
// Runner: retries, bounded concurrency, rate limiting
// ---------------------------------------------------------------------------

/// Retry and limit policy shared by all callers of one backend.
#[derive(Debug, Clone, Copy)]
pub struct RunnerConfig {
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub max_concurrency: usize,
    pub requests_per_minute: Option<u32>,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            max_retries: default_max_retries(),
            retry_backoff_ms: default_retry_backoff_ms(),
            max_concurrency: default_max_concurrency(),
            requests_per_minute: None,
        }
    }
}

impl RunnerConfig {
    pub fn from_backend_config(config: &BackendConfig) -> Self {
        Self {
            max_retries: config.max_retries,
            retry_backoff_ms: config.retry_backoff_ms,
            max_concurrency: config.max_concurrency,
            requests_per_minute: config.requests_per_minute,
        }
    }
}

/// Wraps a backend with retries (exponential backoff on transient errors
/// only), a shared concurrency limit, and an optional request-rate cap.
pub struct BackendRunner {
    backend: Arc<dyn Backend>,
    config: RunnerConfig,
    semaphore: Arc<Semaphore>,
    last_request: Mutex<Option<Instant>>,
}

impl BackendRunner {
    pub fn new(backend: Arc<dyn Backend>, config: RunnerConfig) -> Self {
        let semaphore = Arc::new(Semaphore::new(config.max_concurrency.max(1)));
        Self { backend, config, semaphore, last_request: Mutex::new(None) }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    async fn respect_rate_limit(&self) {
        let Some(rpm) = self.config.requests_per_minute else {
            return;
        };
        let min_interval = Duration::from_secs_f64(60.0 / rpm.max(1) as f64);
        let mut last = self.last_request.lock().await;
        if let Some(previous) = *last {
            let elapsed = previous.elapsed();
            if elapsed < min_interval {
                tokio::time::sleep(min_interval - elapsed).await;
            }
        }
        *last = Some(Instant::now());
    }

    /// Complete a request, retrying transient failures up to `max_retries`
    /// times. Permanent (4xx) and input errors are never retried.
    pub async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        request.validate()?;
        let _permit = self
            .semaphore
            .acquire()
            .await
            .expect("semaphore never closed");
        let mut attempts = 0u32;
        loop {
            self.respect_rate_limit().await;
            attempts += 1;
            match self.backend.complete_once(request).await {
                Ok(response) => return Ok(response),
                Err(Error::Transport { message, .. }) => {
                    if attempts > self.config.max_retries {
                        return Err(Error::Transport { attempts, message });
                    }
                    let backoff = self.config.retry_backoff_ms << (attempts - 1).min(8);
                    tokio::time::sleep(Duration::from_millis(backoff)).await;
                }
                Err(other) => return Err(other),
            }
        }
    }
}
