//! Chat-completion gateway.
//!
//! Three backends sit behind [`ChatBackend`]: a live HTTP chat-completion
//! client, a scripted backend that replays canned responses in order, and a
//! replay backend that serves the raw payloads recorded in a previous run.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{Personality, ScenarioKind};
use crate::schema::Speaker;

pub const DEFAULT_MODEL: &str = "gpt-4o-mini-2024-07-18";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("transport error{}: {message}", .status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },
    #[error("environment variable {0} with the API key is not set")]
    AuthMissing(String),
    #[error("scripted backend has no response left")]
    ScriptExhausted,
    #[error("request timed out")]
    Timeout,
    #[error("unexpected response body: {0}")]
    MalformedResponse(String),
    #[error("no recorded payload for {trial_id} turn {turn_index}")]
    ReplayMissing { trial_id: String, turn_index: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("loading {path}: {message}")]
    Load { path: String, message: String },
}

impl GatewayError {
    /// 429, 5xx and timeouts are worth another attempt.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Timeout => true,
            GatewayError::Transport { status: Some(s), .. } => *s == 429 || (500..600).contains(s),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
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
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::Assistant, content: content.into() }
    }
}

/// Request body in chat-completion wire shape. `temperature` and `seed` are
/// omitted from the JSON when unset so the provider defaults apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>) -> Self {
        ChatRequest {
            model: DEFAULT_MODEL.to_string(),
            messages: vec![ChatMessage::system(system_prompt)],
            temperature: None,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.first() {
            None => Err(GatewayError::InvalidRequest("messages are empty".into())),
            Some(m) if m.role != ChatRole::System => Err(GatewayError::InvalidRequest(
                "first message must be the system prompt".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Where a call sits in a simulation, so deterministic backends can pick the
/// matching response regardless of scheduling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamKey {
    pub trial_id: String,
    pub trial_index: usize,
    pub scenario: ScenarioKind,
    pub personality: Personality,
    pub speaker: Speaker,
    pub turn_index: usize,
    /// Calls this speaker has already made in this trial (retries included).
    pub call_index: usize,
    /// Responses reserved per (trial, speaker) stream in a script.
    pub slots_per_trial: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallContext {
    pub stream: Option<StreamKey>,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest, ctx: &CallContext) -> Result<String, GatewayError>;

    /// Short human-readable description recorded in run manifests.
    fn descriptor(&self) -> String;

    /// True when responses do not depend on the network or the clock.
    fn is_deterministic(&self) -> bool {
        false
    }
}

/// Validates the request and runs it outside any simulation stream.
pub fn complete(req: &ChatRequest, backend: &dyn ChatBackend) -> Result<String, GatewayError> {
    req.validate()?;
    backend.complete(req, &CallContext::default())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    HttpChatCompletion { endpoint: String, auth_env: String },
    /// `None` selects the bundled demo script.
    Scripted(Option<PathBuf>),
    Replay(PathBuf),
}

impl FromStr for BackendKind {
    type Err = String;

    /// `http`, `scripted`, `scripted:FILE` or `replay:DIR`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "http" => Ok(BackendKind::HttpChatCompletion {
                endpoint: DEFAULT_ENDPOINT.into(),
                auth_env: DEFAULT_API_KEY_ENV.into(),
            }),
            None if s == "scripted" => Ok(BackendKind::Scripted(None)),
            Some(("scripted", path)) if !path.is_empty() => {
                Ok(BackendKind::Scripted(Some(PathBuf::from(path))))
            }
            Some(("replay", dir)) if !dir.is_empty() => Ok(BackendKind::Replay(PathBuf::from(dir))),
            _ => Err(format!(
                "unknown backend {s:?}; expected http, scripted, scripted:FILE or replay:DIR"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub max_concurrency: usize,
}

impl Default for HttpOptions {
    fn default() -> Self {
        HttpOptions {
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
            max_concurrency: 4,
        }
    }
}

impl BackendKind {
    pub fn connect(&self, http: &HttpOptions) -> Result<Box<dyn ChatBackend>, GatewayError> {
        match self {
            BackendKind::Scripted(None) => Ok(Box::new(ScriptedBackend::bundled_demo())),
            BackendKind::Scripted(Some(path)) => Ok(Box::new(ScriptedBackend::from_file(path)?)),
            BackendKind::Replay(dir) => Ok(Box::new(ReplayBackend::from_run_dir(dir)?)),
            #[cfg(feature = "http")]
            BackendKind::HttpChatCompletion { endpoint, auth_env } => Ok(Box::new(
                HttpBackend::from_env(endpoint, auth_env, http.clone())?,
            )),
            #[cfg(not(feature = "http"))]
            BackendKind::HttpChatCompletion { .. } => {
                let _ = http;
                Err(GatewayError::InvalidRequest("built without the `http` feature".into()))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Scripted backend

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<Speaker>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub personality: Option<Personality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioKind>,
}

impl ScriptEntry {
    fn matches(&self, key: &StreamKey) -> bool {
        self.speaker.is_none_or(|s| s == key.speaker)
            && self.personality.is_none_or(|p| p == key.personality)
            && self.scenario.is_none_or(|s| s == key.scenario)
    }
}

#[derive(Deserialize)]
struct ScriptHeader {
    #[allow(dead_code)]
    script_version: u32,
    #[serde(default)]
    cycle: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptLine {
    Plain(String),
    Entry(ScriptEntry),
}

/// Serves canned responses in order.
///
/// Outside a simulation every call takes the next entry. Inside one, each
/// (trial, speaker) stream reads its own slice of the entries whose filters
/// match, starting at `trial_index * slots_per_trial`. Running past the end
/// is [`GatewayError::ScriptExhausted`] unless the script is cyclic.
///
/// Script files are line-delimited JSON: an optional header
/// `{"script_version":1,"cycle":true}`, then one entry per line, either a bare
/// string or `{"content":..., "speaker":..., "personality":..., "scenario":...}`.
/// Lines starting with `#` are ignored.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    cycle: bool,
    cursor: AtomicUsize,
    source: String,
}

const DEMO_SCRIPT: &str = include_str!("../data/demo_script.jsonl");

impl ScriptedBackend {
    pub fn new(responses: Vec<String>) -> Self {
        ScriptedBackend {
            entries: responses
                .into_iter()
                .map(|content| ScriptEntry { content, ..Default::default() })
                .collect(),
            cycle: false,
            cursor: AtomicUsize::new(0),
            source: "inline".into(),
        }
    }

    pub fn bundled_demo() -> Self {
        ScriptedBackend::parse(DEMO_SCRIPT, "bundled-demo").expect("bundled demo script parses")
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let src = std::fs::read_to_string(path).map_err(|e| GatewayError::Load {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        ScriptedBackend::parse(&src, &path.display().to_string())
    }

    pub fn parse(src: &str, source: &str) -> Result<Self, GatewayError> {
        let mut entries = Vec::new();
        let mut cycle = false;
        for (i, line) in src.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if entries.is_empty() && line.contains("\"script_version\"") {
                if let Ok(h) = serde_json::from_str::<ScriptHeader>(line) {
                    cycle = h.cycle;
                    continue;
                }
            }
            let entry = match serde_json::from_str::<ScriptLine>(line) {
                Ok(ScriptLine::Plain(content)) => ScriptEntry { content, ..Default::default() },
                Ok(ScriptLine::Entry(e)) => e,
                Err(e) => {
                    return Err(GatewayError::Load {
                        path: source.to_string(),
                        message: format!("line {}: {e}", i + 1),
                    })
                }
            };
            entries.push(entry);
        }
        Ok(ScriptedBackend {
            entries,
            cycle,
            cursor: AtomicUsize::new(0),
            source: source.to_string(),
        })
    }

    pub fn with_cycle(mut self, cycle: bool) -> Self {
        self.cycle = cycle;
        self
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    fn pick<'a>(&self, candidates: &[&'a ScriptEntry], index: usize) -> Option<&'a ScriptEntry> {
        match candidates.len() {
            0 => None,
            n if self.cycle => Some(candidates[index % n]),
            _ => candidates.get(index).copied(),
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, _req: &ChatRequest, ctx: &CallContext) -> Result<String, GatewayError> {
        let entry = match &ctx.stream {
            None => {
                let all: Vec<&ScriptEntry> = self.entries.iter().collect();
                let i = self.cursor.fetch_add(1, Ordering::SeqCst);
                self.pick(&all, i)
            }
            Some(key) => {
                let matching: Vec<&ScriptEntry> =
                    self.entries.iter().filter(|e| e.matches(key)).collect();
                self.pick(&matching, key.trial_index * key.slots_per_trial + key.call_index)
            }
        };
        entry
            .map(|e| e.content.clone())
            .ok_or(GatewayError::ScriptExhausted)
    }

    fn descriptor(&self) -> String {
        format!("scripted:{}", self.source)
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// Replay backend

/// Returns the raw payloads recorded in a run directory's transcripts.
#[derive(Debug)]
pub struct ReplayBackend {
    payloads: HashMap<(String, usize), String>,
    source: String,
}

#[derive(Deserialize)]
struct RecordedTurn {
    trial_id: String,
    turn_index: usize,
    raw: String,
}

impl ReplayBackend {
    pub fn from_run_dir(dir: &Path) -> Result<Self, GatewayError> {
        let load_err = |p: &Path, e: String| GatewayError::Load {
            path: p.display().to_string(),
            message: e,
        };
        let trials = dir.join("trials");
        let mut payloads = HashMap::new();
        let mut files: Vec<PathBuf> = std::fs::read_dir(&trials)
            .map_err(|e| load_err(&trials, e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        for f in files {
            let src = std::fs::read_to_string(&f).map_err(|e| load_err(&f, e.to_string()))?;
            for line in src.lines().filter(|l| !l.trim().is_empty()) {
                let t: RecordedTurn =
                    serde_json::from_str(line).map_err(|e| load_err(&f, e.to_string()))?;
                payloads.insert((t.trial_id, t.turn_index), t.raw);
            }
        }
        Ok(ReplayBackend {
            payloads,
            source: dir.display().to_string(),
        })
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, _req: &ChatRequest, ctx: &CallContext) -> Result<String, GatewayError> {
        let key = ctx.stream.as_ref().ok_or_else(|| {
            GatewayError::InvalidRequest("replay needs a simulation turn to look up".into())
        })?;
        self.payloads
            .get(&(key.trial_id.clone(), key.turn_index))
            .cloned()
            .ok_or_else(|| GatewayError::ReplayMissing {
                trial_id: key.trial_id.clone(),
                turn_index: key.turn_index,
            })
    }

    fn descriptor(&self) -> String {
        format!("replay:{}", self.source)
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// HTTP

/// Exponential backoff: retry `i` (0-based) waits `base_delay * 2^i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }

    /// Runs `op` until it succeeds, fails permanently, or retries run out.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let mut retry = 0;
        loop {
            match op() {
                Err(e) if e.is_transient() && retry < self.max_retries => {
                    tracing::warn!("transient failure ({e}), retrying in {:?}", self.delay(retry));
                    std::thread::sleep(self.delay(retry));
                    retry += 1;
                }
                other => return other,
            }
        }
    }
}

/// Counting semaphore capping in-flight requests.
#[derive(Debug)]
pub struct Semaphore {
    available: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Semaphore {
            available: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

/// Blocking JSON-over-HTTP POST with retries, shared by the chat backend and
/// the external classifier client.
#[cfg(feature = "http")]
#[derive(Debug)]
pub struct JsonPoster {
    agent: ureq::Agent,
    retry: RetryPolicy,
    limiter: Semaphore,
}

#[cfg(feature = "http")]
impl JsonPoster {
    pub fn new(timeout: Duration, retry: RetryPolicy, max_concurrency: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        JsonPoster {
            agent,
            retry,
            limiter: Semaphore::new(max_concurrency),
        }
    }

    pub fn post<B: Serialize>(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &B,
    ) -> Result<serde_json::Value, GatewayError> {
        let _permit = self.limiter.acquire();
        self.retry.run(|| self.post_once(url, bearer, body))
    }

    fn post_once<B: Serialize>(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &B,
    ) -> Result<serde_json::Value, GatewayError> {
        let mut req = self.agent.post(url);
        if let Some(key) = bearer {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(map_ureq_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_ureq_error)?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Transport {
                status: Some(status),
                message: text.chars().take(200).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| GatewayError::MalformedResponse(e.to_string()))
    }
}

#[cfg(feature = "http")]
fn map_ureq_error(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(_) => GatewayError::Timeout,
        ureq::Error::StatusCode(s) => GatewayError::Transport {
            status: Some(s),
            message: "HTTP error".into(),
        },
        other => GatewayError::Transport {
            status: None,
            message: other.to_string(),
        },
    }
}

/// Live chat-completion backend.
#[cfg(feature = "http")]
#[derive(Debug)]
pub struct HttpBackend {
    endpoint: String,
    api_key: String,
    poster: JsonPoster,
}

#[cfg(feature = "http")]
impl HttpBackend {
    /// Reads the API key from `auth_env`; fails before any network activity if unset.
    pub fn from_env(endpoint: &str, auth_env: &str, opts: HttpOptions) -> Result<Self, GatewayError> {
        let api_key = std::env::var(auth_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| GatewayError::AuthMissing(auth_env.to_string()))?;
        Ok(HttpBackend::new(endpoint, &api_key, opts))
    }

    pub fn new(endpoint: &str, api_key: &str, opts: HttpOptions) -> Self {
        HttpBackend {
            endpoint: endpoint.to_string(),
            api_key: api_key.to_string(),
            poster: JsonPoster::new(opts.timeout, opts.retry, opts.max_concurrency),
        }
    }
}

#[cfg(feature = "http")]
impl ChatBackend for HttpBackend {
    fn complete(&self, req: &ChatRequest, _ctx: &CallContext) -> Result<String, GatewayError> {
        req.validate()?;
        let body = self.poster.post(&self.endpoint, Some(&self.api_key), req)?;
        body.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| {
                GatewayError::MalformedResponse("missing choices[0].message.content".into())
            })
    }

    fn descriptor(&self) -> String {
        format!("http:{}", self.endpoint)
    }
}
