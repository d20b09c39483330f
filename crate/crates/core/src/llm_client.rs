//! Chat backends and session bookkeeping.
//!
//! Every backend answers one prompt at a time for a named session. The
//! session key plus the exchange index identify a reply, which is what makes
//! replay deterministic even when sessions run concurrently.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use uuid::Uuid;

use crate::occ_engine::{self, AppraisalFrame};
use crate::prompt_kit::{Prompt, TemplateId};

pub const ENV_ENDPOINT: &str = "AFFECTLAB_ENDPOINT";
pub const ENV_API_KEY: &str = "AFFECTLAB_API_KEY";
pub const ENV_MODEL: &str = "AFFECTLAB_MODEL";

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientError {
    #[error("session {session}, exchange {index}: prompt {got} does not match recorded {expected}")]
    DigestMismatch {
        session: String,
        index: usize,
        expected: TemplateId,
        got: TemplateId,
    },
    #[error("session {session}: no recorded reply for exchange {index}")]
    FixtureExhausted { session: String, index: usize },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("configuration: {0}")]
    Config(String),
    #[error("backend cannot answer: {0}")]
    Unsupported(String),
    #[error("fixture file: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<TemplateId>,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl fmt::Display for BackendDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.model {
            Some(m) => write!(f, "{} ({m})", self.kind),
            None => f.write_str(&self.kind),
        }
    }
}

/// A reply plus the number of attempts it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub text: String,
    pub attempts: u32,
}

impl Reply {
    pub fn once(text: impl Into<String>) -> Self {
        Reply {
            text: text.into(),
            attempts: 1,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Answer `prompt`, the `index`-th exchange of session `session_key`.
    /// `history` holds the earlier exchanges, alternating user/assistant.
    fn reply(
        &self,
        session_key: &str,
        index: usize,
        history: &[Message],
        prompt: &Prompt,
    ) -> Result<Reply, ClientError>;
}

/// Normalise line endings and trailing blanks before hashing.
pub fn normalize_prompt(text: &str) -> String {
    text.replace("\r\n", "\n")
        .replace('\r', "\n")
        .split('\n')
        .map(|l| l.trim_end_matches([' ', '\t']))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Hex SHA-256 of the normalised prompt.
pub fn prompt_digest(text: &str) -> String {
    hex::encode(Sha256::digest(normalize_prompt(text).as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub session_id: Uuid,
    pub key: String,
    pub backend: BackendDescriptor,
    pub messages: Vec<Message>,
    /// Attempts per completed exchange.
    pub attempts: Vec<u32>,
}

/// One conversation. Never reused: every experiment step that needs a fresh
/// context opens a new session with its own key.
pub struct ChatSession<'b> {
    id: Uuid,
    key: String,
    backend: &'b dyn ChatBackend,
    messages: Vec<Message>,
    attempts: Vec<u32>,
}

pub fn open_session<'b>(backend: &'b dyn ChatBackend, key: impl Into<String>) -> ChatSession<'b> {
    ChatSession {
        id: Uuid::new_v4(),
        key: key.into(),
        backend,
        messages: Vec::new(),
        attempts: Vec::new(),
    }
}

impl<'b> ChatSession<'b> {
    pub fn id(&self) -> Uuid {
        self.id
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn exchanges(&self) -> usize {
        self.attempts.len()
    }

    /// Send one prompt. On error the transcript is left unchanged.
    pub fn send(&mut self, prompt: &Prompt) -> Result<String, ClientError> {
        let index = self.exchanges();
        let sent_at = Utc::now();
        let reply = self.backend.reply(&self.key, index, &self.messages, prompt)?;
        self.messages.push(Message {
            role: Role::User,
            text: prompt.text.clone(),
            template: Some(prompt.template),
            timestamp: sent_at,
        });
        self.messages.push(Message {
            role: Role::Assistant,
            text: reply.text.clone(),
            template: None,
            timestamp: Utc::now(),
        });
        self.attempts.push(reply.attempts);
        Ok(reply.text)
    }

    pub fn transcript(&self) -> SessionTranscript {
        SessionTranscript {
            session_id: self.id,
            key: self.key.clone(),
            backend: self.backend.descriptor(),
            messages: self.messages.clone(),
            attempts: self.attempts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub template: TemplateId,
    pub digest: String,
    pub response: String,
}

impl ReplayEntry {
    pub fn new(prompt: &Prompt, response: impl Into<String>) -> Self {
        ReplayEntry {
            template: prompt.template,
            digest: prompt_digest(&prompt.text),
            response: response.into(),
        }
    }
}

/// Recorded exchanges of one session, consumed in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayFixture {
    pub entries: Vec<ReplayEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayMetadata {
    pub model: String,
    pub captured: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayStore {
    pub metadata: ReplayMetadata,
    pub sessions: BTreeMap<String, ReplayFixture>,
}

impl ReplayStore {
    pub fn new(metadata: ReplayMetadata) -> Self {
        ReplayStore {
            metadata,
            sessions: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, session_key: &str, prompt: &Prompt, response: impl Into<String>) {
        self.sessions
            .entry(session_key.to_string())
            .or_default()
            .entries
            .push(ReplayEntry::new(prompt, response));
    }

    pub fn from_json(text: &str) -> Result<Self, ClientError> {
        serde_json::from_str(text).map_err(|e| ClientError::Fixture(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("replay store serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClientError> {
        std::fs::write(path, self.to_json()).map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))
    }
}

/// Answers from a recorded store after checking each prompt digest.
pub struct ReplayBackend {
    store: ReplayStore,
}

impl ReplayBackend {
    pub fn new(store: ReplayStore) -> Self {
        ReplayBackend { store }
    }

    pub fn store(&self) -> &ReplayStore {
        &self.store
    }
}

impl ChatBackend for ReplayBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: "replay".into(),
            model: Some(self.store.metadata.model.clone()),
        }
    }

    fn reply(&self, session_key: &str, index: usize, _history: &[Message], prompt: &Prompt) -> Result<Reply, ClientError> {
        let entry = self
            .store
            .sessions
            .get(session_key)
            .and_then(|f| f.entries.get(index))
            .ok_or_else(|| ClientError::FixtureExhausted {
                session: session_key.to_string(),
                index,
            })?;
        if entry.digest != prompt_digest(&prompt.text) {
            return Err(ClientError::DigestMismatch {
                session: session_key.to_string(),
                index,
                expected: entry.template,
                got: prompt.template,
            });
        }
        Ok(Reply::once(entry.response.clone()))
    }
}

type ReplyFn = dyn Fn(&str, usize, &Prompt) -> String + Send + Sync;

/// Scripted backend for tests and dry runs.
pub struct MockBackend {
    script: Box<ReplyFn>,
}

impl MockBackend {
    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        MockBackend {
            script: Box::new(move |_, _, _| text.clone()),
        }
    }

    pub fn from_fn(f: impl Fn(&str, usize, &Prompt) -> String + Send + Sync + 'static) -> Self {
        MockBackend { script: Box::new(f) }
    }
}

impl ChatBackend for MockBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: "mock".into(),
            model: None,
        }
    }

    fn reply(&self, session_key: &str, index: usize, _history: &[Message], prompt: &Prompt) -> Result<Reply, ClientError> {
        Ok(Reply::once((self.script)(session_key, index, prompt)))
    }
}

const SITUATION_MARKER: &str = "Here is the situation: ";

/// Answers P5 prompts by running the rule engine on a structured frame
/// registered for the situation text.
pub struct EngineBackend {
    frames: HashMap<String, AppraisalFrame>,
}

impl EngineBackend {
    pub fn new(frames: impl IntoIterator<Item = (String, AppraisalFrame)>) -> Self {
        EngineBackend {
            frames: frames.into_iter().map(|(s, f)| (s.trim().to_string(), f)).collect(),
        }
    }
}

impl ChatBackend for EngineBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: "engine".into(),
            model: None,
        }
    }

    fn reply(&self, _session_key: &str, _index: usize, _history: &[Message], prompt: &Prompt) -> Result<Reply, ClientError> {
        if prompt.template != TemplateId::P5 {
            return Err(ClientError::Unsupported(format!("engine only answers P5, got {}", prompt.template)));
        }
        let situation = prompt
            .text
            .rsplit_once(SITUATION_MARKER)
            .map(|(_, s)| s.trim())
            .ok_or_else(|| ClientError::Unsupported("no situation in prompt".into()))?;
        let frame = self
            .frames
            .get(situation)
            .ok_or_else(|| ClientError::Unsupported(format!("no frame registered for `{situation}`")))?;
        let p = occ_engine::appraise(frame).map_err(|e| ClientError::Unsupported(e.to_string()))?;
        Ok(Reply::once(format!(
            "{}, intensity {}. {}",
            p.label.display_name(),
            p.intensity.as_str(),
            p.rationale
        )))
    }
}

/// Wraps a backend and keeps every successful exchange as a replay entry.
pub struct RecordingBackend<B> {
    inner: B,
    metadata: ReplayMetadata,
    sessions: Mutex<BTreeMap<String, ReplayFixture>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B, metadata: ReplayMetadata) -> Self {
        RecordingBackend {
            inner,
            metadata,
            sessions: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn into_store(self) -> ReplayStore {
        ReplayStore {
            metadata: self.metadata,
            sessions: self.sessions.into_inner().unwrap_or_else(|p| p.into_inner()),
        }
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }

    fn reply(&self, session_key: &str, index: usize, history: &[Message], prompt: &Prompt) -> Result<Reply, ClientError> {
        let reply = self.inner.reply(session_key, index, history, prompt)?;
        let mut sessions = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        let entries = &mut sessions.entry(session_key.to_string()).or_default().entries;
        entries.truncate(index);
        entries.push(ReplayEntry::new(prompt, reply.text.clone()));
        Ok(reply)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub backoff_base: Duration,
    /// 0 disables rate limiting.
    pub requests_per_minute: u32,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            api_key: None,
            model: model.into(),
            temperature: 0.0,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            requests_per_minute: 20,
        }
    }

    /// Endpoint, key and model from the environment. The endpoint is required.
    pub fn from_env() -> Result<Self, ClientError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ClientError> {
        let endpoint = get(ENV_ENDPOINT)
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| ClientError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = get(ENV_MODEL).unwrap_or_else(|| "gpt-3.5-turbo".to_string());
        let mut cfg = HttpConfig::new(endpoint, model);
        cfg.api_key = get(ENV_API_KEY).filter(|s| !s.is_empty());
        Ok(cfg)
    }
}

#[cfg(feature = "http")]
struct TokenBucket {
    capacity: f64,
    per_sec: f64,
    tokens: f64,
    last: std::time::Instant,
}

#[cfg(feature = "http")]
impl TokenBucket {
    fn new(per_minute: u32) -> Self {
        TokenBucket {
            capacity: per_minute.max(1) as f64,
            per_sec: per_minute as f64 / 60.0,
            tokens: per_minute.max(1) as f64,
            last: std::time::Instant::now(),
        }
    }

    /// Time to wait before the next request may go out; zero when a token
    /// was taken.
    fn take(&mut self) -> Duration {
        let now = std::time::Instant::now();
        let elapsed = now.duration_since(self.last).as_secs_f64();
        self.last = now;
        self.tokens = (self.tokens + elapsed * self.per_sec).min(self.capacity);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            Duration::ZERO
        } else {
            Duration::from_secs_f64((1.0 - self.tokens) / self.per_sec)
        }
    }
}

#[cfg(feature = "http")]
pub use http::HttpBackend;

#[cfg(feature = "http")]
mod http {
    use super::*;

    #[derive(Serialize)]
    struct WireMessage<'a> {
        role: &'a str,
        content: &'a str,
    }

    #[derive(Serialize)]
    struct WireRequest<'a> {
        model: &'a str,
        messages: Vec<WireMessage<'a>>,
        temperature: f64,
    }

    #[derive(Deserialize)]
    struct WireResponse {
        choices: Vec<WireChoice>,
    }

    #[derive(Deserialize)]
    struct WireChoice {
        message: WireReply,
    }

    #[derive(Deserialize)]
    struct WireReply {
        content: String,
    }

    enum Failure {
        Retryable(String),
        Timeout,
        Fatal(String),
    }

    /// Generic chat-completions endpoint: POST `{model, messages, temperature}`,
    /// answer read from `choices[0].message.content`.
    pub struct HttpBackend {
        config: HttpConfig,
        client: reqwest::blocking::Client,
        bucket: Option<Mutex<TokenBucket>>,
    }

    impl HttpBackend {
        pub fn new(config: HttpConfig) -> Result<Self, ClientError> {
            if config.endpoint.trim().is_empty() {
                return Err(ClientError::Config("endpoint is empty".into()));
            }
            let client = reqwest::blocking::Client::builder()
                .timeout(config.timeout)
                .build()
                .map_err(|e| ClientError::Config(e.to_string()))?;
            let bucket = (config.requests_per_minute > 0).then(|| Mutex::new(TokenBucket::new(config.requests_per_minute)));
            Ok(HttpBackend { config, client, bucket })
        }

        pub fn from_env() -> Result<Self, ClientError> {
            Self::new(HttpConfig::from_env()?)
        }

        fn throttle(&self) {
            if let Some(bucket) = &self.bucket {
                loop {
                    let wait = bucket.lock().unwrap_or_else(|p| p.into_inner()).take();
                    if wait.is_zero() {
                        return;
                    }
                    std::thread::sleep(wait);
                }
            }
        }

        fn attempt(&self, body: &WireRequest<'_>) -> Result<String, Failure> {
            let mut req = self.client.post(&self.config.endpoint).json(body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().map_err(|e| {
                if e.is_timeout() {
                    Failure::Timeout
                } else {
                    Failure::Retryable(e.to_string())
                }
            })?;
            let status = resp.status();
            if status.is_server_error() || status.as_u16() == 429 {
                return Err(Failure::Retryable(format!("HTTP {status}")));
            }
            if !status.is_success() {
                return Err(Failure::Fatal(format!("HTTP {status}")));
            }
            let parsed: WireResponse = resp.json().map_err(|e| {
                if e.is_timeout() {
                    Failure::Timeout
                } else {
                    Failure::Fatal(format!("malformed response: {e}"))
                }
            })?;
            parsed
                .choices
                .into_iter()
                .next()
                .map(|c| c.message.content)
                .ok_or_else(|| Failure::Fatal("response has no choices".into()))
        }
    }

    impl ChatBackend for HttpBackend {
        fn descriptor(&self) -> BackendDescriptor {
            BackendDescriptor {
                kind: "http".into(),
                model: Some(self.config.model.clone()),
            }
        }

        fn reply(&self, _session_key: &str, _index: usize, history: &[Message], prompt: &Prompt) -> Result<Reply, ClientError> {
            let mut messages: Vec<WireMessage<'_>> = history
                .iter()
                .map(|m| WireMessage {
                    role: m.role.as_str(),
                    content: &m.text,
                })
                .collect();
            messages.push(WireMessage {
                role: "user",
                content: &prompt.text,
            });
            let body = WireRequest {
                model: &self.config.model,
                messages,
                temperature: self.config.temperature,
            };
            let max_attempts = self.config.max_retries + 1;
            let mut attempts = 0;
            loop {
                attempts += 1;
                self.throttle();
                let failure = match self.attempt(&body) {
                    Ok(text) => return Ok(Reply { text, attempts }),
                    Err(f) => f,
                };
                match failure {
                    Failure::Fatal(message) => return Err(ClientError::Transport { attempts, message }),
                    Failure::Timeout if attempts >= max_attempts => return Err(ClientError::Timeout { attempts }),
                    Failure::Retryable(message) if attempts >= max_attempts => {
                        return Err(ClientError::Transport { attempts, message })
                    }
                    _ => std::thread::sleep(self.config.backoff_base * 2u32.pow(attempts - 1)),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occ_engine::{canonical_frame, EmotionLabel};

    fn prompt(template: TemplateId, text: &str) -> Prompt {
        Prompt {
            template,
            text: text.to_string(),
        }
    }

    #[test]
    fn sessions_get_distinct_ids() {
        let b = MockBackend::constant("ok");
        let a = open_session(&b, "x");
        let c = open_session(&b, "x");
        assert_ne!(a.id(), c.id());
        assert!(a.messages().is_empty());
    }

    #[test]
    fn mock_echo() {
        let b = MockBackend::constant("Joy");
        let mut s = open_session(&b, "k");
        assert_eq!(s.send(&prompt(TemplateId::P5, "anything")).unwrap(), "Joy");
        let roles: Vec<Role> = s.messages().iter().map(|m| m.role).collect();
        assert_eq!(roles, [Role::User, Role::Assistant]);
    }

    #[test]
    fn empty_replay_fails_on_first_send() {
        let b = ReplayBackend::new(ReplayStore::default());
        let mut s = open_session(&b, "k");
        assert_eq!(
            s.send(&prompt(TemplateId::P1, "hi")),
            Err(ClientError::FixtureExhausted { session: "k".into(), index: 0 })
        );
        assert!(s.messages().is_empty());
    }

    #[test]
    fn replay_checks_digest_and_order() {
        let p1 = prompt(TemplateId::P1, "instruction");
        let block = prompt(TemplateId::P1Block, "1. a");
        let mut store = ReplayStore::default();
        store.push("k", &p1, "Got it.");
        store.push("k", &block, "| 1 | 0.1 | 0.2 | 0.3 |");
        let b = ReplayBackend::new(store);

        let mut s = open_session(&b, "k");
        assert_eq!(s.send(&p1).unwrap(), "Got it.");
        let err = s.send(&prompt(TemplateId::P1Block, "1. b")).unwrap_err();
        assert_eq!(
            err,
            ClientError::DigestMismatch {
                session: "k".into(),
                index: 1,
                expected: TemplateId::P1Block,
                got: TemplateId::P1Block
            }
        );
        assert_eq!(s.send(&block).unwrap(), "| 1 | 0.1 | 0.2 | 0.3 |");
        assert!(matches!(s.send(&block), Err(ClientError::FixtureExhausted { index: 2, .. })));
    }

    #[test]
    fn digest_ignores_line_endings_and_trailing_blanks() {
        assert_eq!(prompt_digest("a \r\nb\t"), prompt_digest("a\nb"));
        assert_ne!(prompt_digest("a\nb"), prompt_digest("a b"));
    }

    #[test]
    fn interleaved_sessions_stay_independent() {
        let b = MockBackend::from_fn(|key, index, p| format!("{key}#{index}:{}", p.text));
        let mut s1 = open_session(&b, "one");
        let mut s2 = open_session(&b, "two");
        s1.send(&prompt(TemplateId::P3, "a")).unwrap();
        s2.send(&prompt(TemplateId::P3, "b")).unwrap();
        s1.send(&prompt(TemplateId::P3, "c")).unwrap();
        let t1: Vec<&str> = s1.messages().iter().map(|m| m.text.as_str()).collect();
        let t2: Vec<&str> = s2.messages().iter().map(|m| m.text.as_str()).collect();
        assert_eq!(t1, ["a", "one#0:a", "c", "one#1:c"]);
        assert_eq!(t2, ["b", "two#0:b"]);
    }

    #[test]
    fn recording_round_trips_through_replay() {
        let rec = RecordingBackend::new(MockBackend::from_fn(|_, i, _| format!("r{i}")), ReplayMetadata::default());
        {
            let mut s = open_session(&rec, "k");
            s.send(&prompt(TemplateId::P4, "x")).unwrap();
            s.send(&prompt(TemplateId::P4, "y")).unwrap();
        }
        let store = ReplayStore::from_json(&rec.into_store().to_json()).unwrap();
        let b = ReplayBackend::new(store);
        let mut s = open_session(&b, "k");
        assert_eq!(s.send(&prompt(TemplateId::P4, "x")).unwrap(), "r0");
        assert_eq!(s.send(&prompt(TemplateId::P4, "y")).unwrap(), "r1");
    }

    #[test]
    fn engine_answers_registered_situation() {
        let b = EngineBackend::new([("Anne just passed her exam.".to_string(), canonical_frame(EmotionLabel::Joy))]);
        let mut s = open_session(&b, "k");
        let text = format!("rules...\n\n{SITUATION_MARKER}Anne just passed her exam.");
        let reply = s.send(&prompt(TemplateId::P5, &text)).unwrap();
        assert!(reply.starts_with("Joy, intensity "), "{reply}");
        assert!(s.send(&prompt(TemplateId::P5, "no marker")).is_err());
    }

    #[test]
    fn http_config_requires_endpoint() {
        let err = HttpConfig::from_lookup(|_| None).unwrap_err();
        assert!(matches!(err, ClientError::Config(_)));
        let cfg = HttpConfig::from_lookup(|k| (k == ENV_ENDPOINT).then(|| "http://localhost:1/v1".to_string())).unwrap();
        assert_eq!(cfg.temperature, 0.0);
        assert_eq!(cfg.max_retries, 3);
    }

    #[cfg(feature = "http")]
    #[test]
    fn token_bucket_spaces_requests() {
        let mut b = TokenBucket::new(60);
        for _ in 0..60 {
            assert!(b.take().is_zero());
        }
        let wait = b.take();
        assert!(wait > Duration::from_millis(900) && wait <= Duration::from_secs(1), "{wait:?}");
    }
}
