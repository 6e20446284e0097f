//! Language-model plumbing: typed requests, per-stage token budgets, the
//! scripted test double, record/replay sessions, and a retrying HTTP client.
//!
//! Decoding is always greedy. [`LmRequest::greedy`] is the only constructor
//! and every client validates the request before use, so a non-zero
//! temperature cannot reach a transport.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::solution::Task;
use crate::util::Gate;

/// Which stage of the pipeline a request belongs to; budgets key off this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmStage {
    Base,
    Feedback,
    Refiner,
}

impl LmStage {
    pub fn name(&self) -> &'static str {
        match self {
            LmStage::Base => "base",
            LmStage::Feedback => "feedback",
            LmStage::Refiner => "refiner",
        }
    }
}

impl fmt::Display for LmStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: ChatRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

/// One completion request. Greedy by construction; [`validate`] re-checks so
/// hand-built or deserialized requests cannot smuggle sampling in.
///
/// [`validate`]: LmRequest::validate
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmRequest {
    pub stage: LmStage,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<String>,
}

impl LmRequest {
    pub fn greedy(stage: LmStage, messages: Vec<ChatMessage>, max_tokens: u32) -> LmRequest {
        LmRequest {
            stage,
            messages,
            max_tokens,
            temperature: 0.0,
            stop: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature != 0.0 {
            return Err(Error::NonGreedyTemperature(self.temperature));
        }
        Ok(())
    }

    /// Stable content digest used as the record/replay key.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("request serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex::encode(hasher.finalize())
    }

    fn joined_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Per-stage completion-token ceilings for one task family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub base: u32,
    pub feedback: u32,
    pub refiner: u32,
}

impl TokenBudget {
    /// The fixed budgets per task family.
    pub fn for_task(task: Task) -> TokenBudget {
        match task {
            Task::Math | Task::Logic => TokenBudget {
                base: 300,
                feedback: 600,
                refiner: 600,
            },
            Task::Qa => TokenBudget {
                base: 450,
                feedback: 600,
                refiner: 800,
            },
        }
    }

    pub fn limit_for(&self, stage: LmStage) -> u32 {
        match stage {
            LmStage::Base => self.base,
            LmStage::Feedback => self.feedback,
            LmStage::Refiner => self.refiner,
        }
    }

    /// Errors when a requested completion length exceeds the stage ceiling.
    pub fn check(&self, stage: LmStage, requested: u32) -> Result<()> {
        let budget = self.limit_for(stage);
        if requested > budget {
            return Err(Error::BudgetExceeded {
                stage: stage.name().to_string(),
                requested,
                budget,
            });
        }
        Ok(())
    }
}

/// A completion backend. Implementations must be shareable across the worker
/// threads that process problems in parallel.
pub trait LmClient: Send + Sync {
    fn complete(&self, request: &LmRequest) -> Result<String>;
}

impl<T: LmClient + ?Sized> LmClient for &T {
    fn complete(&self, request: &LmRequest) -> Result<String> {
        (**self).complete(request)
    }
}

impl<T: LmClient + ?Sized> LmClient for std::sync::Arc<T> {
    fn complete(&self, request: &LmRequest) -> Result<String> {
        (**self).complete(request)
    }
}

/// How one rule of a [`ScriptedLm`] decides it applies to a request.
#[derive(Debug, Clone)]
pub enum ScriptRule {
    /// Applies when any part of the prompt contains `needle`.
    Substring { needle: String, reply: String },
    /// Applies when the prompt contains every one of `needles`.
    AllOf { needles: Vec<String>, reply: String },
    /// Applies to the `index`-th call (0-based) regardless of content.
    Position { index: usize, reply: String },
}

impl ScriptRule {
    pub fn substring(needle: impl Into<String>, reply: impl Into<String>) -> ScriptRule {
        ScriptRule::Substring {
            needle: needle.into(),
            reply: reply.into(),
        }
    }

    pub fn all_of<I, S>(needles: I, reply: impl Into<String>) -> ScriptRule
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptRule::AllOf {
            needles: needles.into_iter().map(Into::into).collect(),
            reply: reply.into(),
        }
    }

    pub fn position(index: usize, reply: impl Into<String>) -> ScriptRule {
        ScriptRule::Position {
            index,
            reply: reply.into(),
        }
    }

    fn matches(&self, text: &str, call_index: usize) -> bool {
        match self {
            ScriptRule::Substring { needle, .. } => text.contains(needle.as_str()),
            ScriptRule::AllOf { needles, .. } => {
                needles.iter().all(|n| text.contains(n.as_str()))
            }
            ScriptRule::Position { index, .. } => *index == call_index,
        }
    }

    fn reply(&self) -> &str {
        match self {
            ScriptRule::Substring { reply, .. }
            | ScriptRule::AllOf { reply, .. }
            | ScriptRule::Position { reply, .. } => reply,
        }
    }
}

/// Deterministic in-memory client for tests and fixtures. The first matching
/// rule wins; an unmatched request is a typed error so scripts fail loudly.
pub struct ScriptedLm {
    rules: Vec<ScriptRule>,
    calls: Mutex<Vec<LmRequest>>,
}

impl ScriptedLm {
    pub fn new(rules: Vec<ScriptRule>) -> ScriptedLm {
        ScriptedLm {
            rules,
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Script that replies to the n-th call with the n-th entry.
    pub fn sequence<I, S>(replies: I) -> ScriptedLm
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedLm::new(
            replies
                .into_iter()
                .enumerate()
                .map(|(i, r)| ScriptRule::position(i, r))
                .collect(),
        )
    }

    /// Every request seen so far, in call order.
    pub fn calls(&self) -> Vec<LmRequest> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl LmClient for ScriptedLm {
    fn complete(&self, request: &LmRequest) -> Result<String> {
        request.validate()?;
        let mut calls = self.calls.lock().unwrap();
        let index = calls.len();
        calls.push(request.clone());
        let text = request.joined_text();
        for rule in &self.rules {
            if rule.matches(&text, index) {
                return Ok(rule.reply().to_string());
            }
        }
        Err(Error::ScriptMiss { index })
    }
}

/// One line of a session file: the request, its digest, and the reply.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionEntry {
    pub digest: String,
    pub request: LmRequest,
    pub response: String,
}

/// Wraps a live client and appends every successful exchange to a JSONL
/// session file, keyed by request digest, for later replay.
pub struct RecordingLm<C: LmClient> {
    inner: C,
    file: Mutex<std::fs::File>,
}

impl<C: LmClient> RecordingLm<C> {
    /// Creates (or truncates) the session file.
    pub fn create(inner: C, path: impl AsRef<Path>) -> Result<RecordingLm<C>> {
        if let Some(parent) = path.as_ref().parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = std::fs::File::create(path)?;
        Ok(RecordingLm {
            inner,
            file: Mutex::new(file),
        })
    }
}

impl<C: LmClient> LmClient for RecordingLm<C> {
    fn complete(&self, request: &LmRequest) -> Result<String> {
        let response = self.inner.complete(request)?;
        let entry = SessionEntry {
            digest: request.digest(),
            request: request.clone(),
            response: response.clone(),
        };
        let line = serde_json::to_string(&entry)?;
        let mut file = self.file.lock().unwrap();
        writeln!(file, "{line}")?;
        file.flush()?;
        Ok(response)
    }
}

/// Serves responses from a previously recorded session; any request whose
/// digest is absent is a typed error, which keeps replays honest.
pub struct ReplayLm {
    responses: HashMap<String, String>,
    path: PathBuf,
}

impl ReplayLm {
    pub fn load(path: impl AsRef<Path>) -> Result<ReplayLm> {
        let path = path.as_ref().to_path_buf();
        let file = std::fs::File::open(&path)?;
        let mut responses = HashMap::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: SessionEntry = serde_json::from_str(&line)?;
            responses.insert(entry.digest, entry.response);
        }
        Ok(ReplayLm { responses, path })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl LmClient for ReplayLm {
    fn complete(&self, request: &LmRequest) -> Result<String> {
        request.validate()?;
        let digest = request.digest();
        self.responses
            .get(&digest)
            .cloned()
            .ok_or(Error::ReplayMiss { digest })
    }
}

/// Whether model calls hit the network, are recorded, or come from a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Live,
    Record,
    Replay,
}

impl std::str::FromStr for SessionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<SessionMode> {
        match s {
            "live" => Ok(SessionMode::Live),
            "record" => Ok(SessionMode::Record),
            "replay" => Ok(SessionMode::Replay),
            other => Err(Error::InvalidConfig(format!(
                "unknown session mode {other:?}; expected live, record, or replay"
            ))),
        }
    }
}

/// Connection settings for the HTTP client (an OpenAI-style chat endpoint).
#[derive(Debug, Clone)]
pub struct HttpLmConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    /// Environment variable read for the bearer token; unset means no auth
    /// header (local servers).
    pub api_key_env: String,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub request_timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for HttpLmConfig {
    fn default() -> Self {
        HttpLmConfig {
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".into(),
            model: "local".into(),
            api_key_env: "MAF_API_KEY".into(),
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
            request_timeout: Duration::from_secs(60),
            max_in_flight: 4,
        }
    }
}

enum StatusClass {
    Ok,
    Retryable,
    Auth,
    Fatal,
}

fn classify_status(status: u16) -> StatusClass {
    match status {
        200..=299 => StatusClass::Ok,
        401 | 403 => StatusClass::Auth,
        429 => StatusClass::Retryable,
        500..=599 => StatusClass::Retryable,
        _ => StatusClass::Fatal,
    }
}

/// Pulls the completion text out of an OpenAI-style response body.
fn parse_completion_body(body: &serde_json::Value) -> Result<String> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| Error::LmTransport("response body has no choices".into()))?;
    choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| Error::LmTransport("response choice has no text content".into()))
}

/// Blocking HTTP client with bounded in-flight requests and retry with
/// exponential backoff on 429/5xx and transport errors.
pub struct HttpLmClient {
    config: HttpLmConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl HttpLmClient {
    pub fn new(config: HttpLmConfig) -> Result<HttpLmClient> {
        if config.max_attempts == 0 {
            return Err(Error::InvalidConfig("max_attempts must be at least 1".into()));
        }
        if config.max_in_flight == 0 {
            return Err(Error::InvalidConfig("max_in_flight must be at least 1".into()));
        }
        let api_key = std::env::var(&config.api_key_env).ok();
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| Error::LmTransport(e.to_string()))?;
        let gate = Gate::new(config.max_in_flight);
        Ok(HttpLmClient {
            config,
            api_key,
            client,
            gate,
        })
    }

    fn body_for(&self, request: &LmRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.config.model,
            "messages": request.messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        if let Some(stop) = &request.stop {
            body["stop"] = serde_json::json!([stop]);
        }
        body
    }
}

impl LmClient for HttpLmClient {
    fn complete(&self, request: &LmRequest) -> Result<String> {
        request.validate()?;
        let _permit = self.gate.acquire();
        let body = self.body_for(request);
        let mut last_error = String::new();

        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                let base = self.config.backoff_base * 2u32.pow(attempt - 1);
                let jitter = rand::thread_rng().gen_range(Duration::ZERO..=base / 2);
                std::thread::sleep(base + jitter);
            }
            let mut builder = self.client.post(&self.config.endpoint).json(&body);
            if let Some(key) = &self.api_key {
                builder = builder.bearer_auth(key);
            }
            match builder.send() {
                Err(e) => {
                    last_error = format!("request failed: {e}");
                    log::warn!("lm call attempt {} failed: {last_error}", attempt + 1);
                }
                Ok(response) => {
                    let status = response.status().as_u16();
                    match classify_status(status) {
                        StatusClass::Ok => {
                            let value: serde_json::Value = response
                                .json()
                                .map_err(|e| Error::LmTransport(format!("bad response body: {e}")))?;
                            return parse_completion_body(&value);
                        }
                        StatusClass::Auth => {
                            let detail = response.text().unwrap_or_default();
                            return Err(Error::LmAuth(format!("http {status}: {detail}")));
                        }
                        StatusClass::Retryable => {
                            last_error = format!("http {status}");
                            log::warn!("lm call attempt {} got {last_error}", attempt + 1);
                        }
                        StatusClass::Fatal => {
                            let detail = response.text().unwrap_or_default();
                            return Err(Error::LmTransport(format!("http {status}: {detail}")));
                        }
                    }
                }
            }
        }
        Err(Error::LmTransport(format!(
            "gave up after {} attempts: {last_error}",
            self.config.max_attempts
        )))
    }
}
