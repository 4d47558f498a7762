//! Chat-completion client: one prompt per fresh single-message dialogue.
//!
//! Three backends sit behind [`LlmClient`]: a live HTTP endpoint, replay from a
//! cassette of recorded exchanges keyed by the SHA-256 of the prompt body, and
//! a scripted in-process responder for tests and synthetic runs.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompting::PromptText;

pub const API_KEY_ENV: &str = "RADX_API_KEY";
pub const CASSETTE_ENV: &str = "RADX_CASSETTE";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("credential rejected: {0}")]
    Auth(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    BadResponse(String),
    #[error("no recorded exchange for prompt digest {0}")]
    CassetteMiss(String),
    #[error("cassette {path} line {line}: {message}")]
    CassetteCorrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("prompt refers to unknown report {0:?}")]
    UnknownReport(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("cassette I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl LlmError {
    fn transient(message: impl Into<String>) -> Self {
        LlmError::Transport {
            attempts: 1,
            message: message.into(),
        }
    }

    fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    Replay,
    Scripted,
}

impl fmt::Display for BackendMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendMode::Live => "live",
            BackendMode::Replay => "replay",
            BackendMode::Scripted => "scripted",
        })
    }
}

impl std::str::FromStr for BackendMode {
    type Err = LlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(BackendMode::Live),
            "replay" => Ok(BackendMode::Replay),
            "scripted" => Ok(BackendMode::Scripted),
            other => Err(LlmError::Config(format!("unknown backend mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub mode: BackendMode,
    pub endpoint_url: Option<String>,
    pub model_name: Option<String>,
    /// `None` leaves sampling temperature to the backend default.
    pub temperature: Option<f64>,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub cassette_path: Option<PathBuf>,
    pub strict_replay: bool,
}

impl BackendConfig {
    pub fn new(mode: BackendMode) -> Self {
        BackendConfig {
            mode,
            endpoint_url: None,
            model_name: None,
            temperature: None,
            max_retries: 3,
            retry_backoff_ms: 500,
            cassette_path: None,
            strict_replay: true,
        }
    }

    pub fn replay(cassette: impl Into<PathBuf>) -> Self {
        BackendConfig {
            cassette_path: Some(cassette.into()),
            ..BackendConfig::new(BackendMode::Replay)
        }
    }

    /// Checks mode requirements; `env` looks up environment variables.
    pub fn validate_with(&self, env: impl Fn(&str) -> Option<String>) -> Result<(), LlmError> {
        if self.retry_backoff_ms == 0 {
            return Err(LlmError::Config("retry_backoff_ms must be positive".into()));
        }
        if let Some(t) = self.temperature {
            if !(t.is_finite() && t >= 0.0) {
                return Err(LlmError::Config(format!(
                    "temperature must be >= 0, got {t}"
                )));
            }
        }
        let needs_live = self.mode == BackendMode::Live
            || (self.mode == BackendMode::Replay
                && !self.strict_replay
                && self.endpoint_url.is_some());
        if needs_live {
            if self.endpoint_url.as_deref().is_none_or(str::is_empty) {
                return Err(LlmError::Config("live mode requires endpoint_url".into()));
            }
            if env(API_KEY_ENV).is_none_or(|k| k.is_empty()) {
                return Err(LlmError::Config(format!(
                    "live mode requires {API_KEY_ENV}"
                )));
            }
        }
        if self.mode == BackendMode::Replay {
            match &self.cassette_path {
                Some(p) if p.exists() => {}
                Some(p) => {
                    return Err(LlmError::Config(format!(
                        "cassette {} does not exist",
                        p.display()
                    )))
                }
                None => return Err(LlmError::Config("replay mode requires a cassette".into())),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        self.validate_with(|k| std::env::var(k).ok())
    }
}

/// Hex SHA-256 of the exact prompt bytes.
pub fn prompt_digest(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_id: Option<String>,
    pub prompt_body: String,
    pub response_body: String,
    pub timestamp: DateTime<Utc>,
    pub attempt_count: u32,
}

impl Exchange {
    pub fn new(prompt: &PromptText, response_body: String, attempt_count: u32) -> Self {
        Exchange {
            prompt_digest: prompt_digest(&prompt.body),
            report_id: Some(prompt.report_id.clone()),
            prompt_body: prompt.body.clone(),
            response_body,
            timestamp: Utc::now(),
            attempt_count,
        }
    }

    pub fn digest_matches(&self) -> bool {
        prompt_digest(&self.prompt_body) == self.prompt_digest
    }
}

/// A chat backend answering one user message with one reply.
pub trait ChatBackend: Send + Sync {
    fn send(&self, prompt: &str) -> Result<String, LlmError>;
}

pub type Responder = Arc<dyn Fn(&str) -> Result<String, LlmError> + Send + Sync>;

/// In-process backend driven by a response function.
#[derive(Clone)]
pub struct ScriptedBackend {
    responder: Responder,
}

impl ScriptedBackend {
    pub fn new(f: impl Fn(&str) -> Result<String, LlmError> + Send + Sync + 'static) -> Self {
        ScriptedBackend {
            responder: Arc::new(f),
        }
    }

    pub fn from_responder(responder: Responder) -> Self {
        ScriptedBackend { responder }
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(&self, prompt: &str) -> Result<String, LlmError> {
        (self.responder)(prompt)
    }
}

/// Chat-completions HTTP backend.
pub struct LiveBackend {
    http: reqwest::blocking::Client,
    endpoint: String,
    model: Option<String>,
    temperature: Option<f64>,
    api_key: String,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    messages: [ChatMessage<'a>; 1],
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

impl LiveBackend {
    pub fn new(
        endpoint: impl Into<String>,
        model: Option<String>,
        temperature: Option<f64>,
        api_key: impl Into<String>,
    ) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(LiveBackend {
            http,
            endpoint: endpoint.into(),
            model,
            temperature,
            api_key: api_key.into(),
        })
    }
}

impl ChatBackend for LiveBackend {
    fn send(&self, prompt: &str) -> Result<String, LlmError> {
        let request = ChatRequest {
            model: self.model.as_deref(),
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.temperature,
        };
        let response = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&request)
            .send()
            .map_err(|e| LlmError::transient(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| LlmError::transient(e.to_string()))?;
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(LlmError::Auth(format!("HTTP {status}: {text}"))),
            408 | 429 | 500..=599 => {
                return Err(LlmError::transient(format!("HTTP {status}: {text}")))
            }
            code => {
                return Err(LlmError::Http {
                    status: code,
                    body: text,
                })
            }
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::BadResponse("no choices[0].message.content".into()))
    }
}

/// Recorded exchanges keyed by prompt digest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cassette {
    entries: HashMap<String, Exchange>,
}

impl Cassette {
    /// Builds a cassette; later exchanges replace earlier ones with the same
    /// digest. Returns the digests that were overwritten.
    pub fn from_exchanges(exchanges: impl IntoIterator<Item = Exchange>) -> (Self, Vec<String>) {
        let mut entries = HashMap::new();
        let mut overwritten = Vec::new();
        for e in exchanges {
            let digest = e.prompt_digest.clone();
            if entries.insert(digest.clone(), e).is_some() {
                log::warn!("cassette: duplicate prompt digest {digest}, keeping the last exchange");
                overwritten.push(digest);
            }
        }
        (Cassette { entries }, overwritten)
    }

    pub fn get(&self, digest: &str) -> Option<&Exchange> {
        self.entries.get(digest)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exchanges sorted by digest.
    pub fn exchanges(&self) -> Vec<&Exchange> {
        let mut v: Vec<&Exchange> = self.entries.values().collect();
        v.sort_by(|a, b| a.prompt_digest.cmp(&b.prompt_digest));
        v
    }
}

pub fn load_cassette(path: impl AsRef<Path>) -> Result<Cassette, LlmError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut exchanges = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| LlmError::CassetteCorrupt {
            path: path.display().to_string(),
            line: idx + 1,
            message,
        };
        let exchange: Exchange = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        if !exchange.digest_matches() {
            return Err(corrupt("prompt_digest does not match prompt_body".into()));
        }
        exchanges.push(exchange);
    }
    Ok(Cassette::from_exchanges(exchanges).0)
}

/// Writes exchanges as JSONL, one per prompt digest (last write wins).
/// Returns the digests whose earlier exchanges were dropped.
pub fn record_cassette(
    exchanges: &[Exchange],
    path: impl AsRef<Path>,
) -> Result<Vec<String>, LlmError> {
    let mut last_index: HashMap<&str, usize> = HashMap::new();
    let mut overwritten = Vec::new();
    for (i, e) in exchanges.iter().enumerate() {
        if last_index.insert(&e.prompt_digest, i).is_some() {
            log::warn!(
                "cassette: duplicate prompt digest {}, keeping the last exchange",
                e.prompt_digest
            );
            overwritten.push(e.prompt_digest.clone());
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    for (i, e) in exchanges.iter().enumerate() {
        if last_index[e.prompt_digest.as_str()] == i {
            serde_json::to_writer(&mut out, e).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(overwritten)
}

/// Appends exchanges to a cassette file through a single locked writer.
pub struct CassetteWriter {
    file: Mutex<BufWriter<File>>,
}

impl CassetteWriter {
    pub fn append_to(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(CassetteWriter {
            file: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn append(&self, exchange: &Exchange) -> Result<(), LlmError> {
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        serde_json::to_writer(&mut *file, exchange).map_err(std::io::Error::from)?;
        file.write_all(b"\n")?;
        file.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl RetryPolicy {
    fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64 << retry.min(10);
        Duration::from_millis(self.backoff_ms.saturating_mul(factor))
    }

    /// Runs `op`, retrying transport failures up to `max_retries` times.
    /// Returns the result and the number of attempts made.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, LlmError>,
    ) -> Result<(T, u32), LlmError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match op() {
                Ok(v) => return Ok((v, attempt)),
                Err(e) if e.is_retryable() && attempt <= self.max_retries => {
                    log::debug!("attempt {attempt} failed: {e}; retrying");
                    std::thread::sleep(self.delay(attempt - 1));
                }
                Err(LlmError::Transport { message, .. }) => {
                    return Err(LlmError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

enum Source {
    Backend(Box<dyn ChatBackend>),
    Replay {
        cassette: Cassette,
        strict: bool,
        fallback: Option<Box<dyn ChatBackend>>,
    },
}

/// Sends prompts, one fresh dialogue each, and returns the exchanges.
pub struct LlmClient {
    mode: BackendMode,
    source: Source,
    retry: RetryPolicy,
    recorder: Option<CassetteWriter>,
}

impl LlmClient {
    /// Builds a client for `config`. Scripted mode requires `scripted`.
    pub fn from_config(
        config: &BackendConfig,
        scripted: Option<Responder>,
    ) -> Result<Self, LlmError> {
        config.validate()?;
        let retry = RetryPolicy {
            max_retries: config.max_retries,
            backoff_ms: config.retry_backoff_ms,
        };
        let live = || -> Result<Box<dyn ChatBackend>, LlmError> {
            let key = std::env::var(API_KEY_ENV).unwrap_or_default();
            Ok(Box::new(LiveBackend::new(
                config.endpoint_url.clone().unwrap_or_default(),
                config.model_name.clone(),
                config.temperature,
                key,
            )?))
        };
        let (source, recorder) = match config.mode {
            BackendMode::Live => {
                let recorder = config
                    .cassette_path
                    .as_ref()
                    .map(CassetteWriter::append_to)
                    .transpose()?;
                (Source::Backend(live()?), recorder)
            }
            BackendMode::Scripted => {
                let responder = scripted.ok_or_else(|| {
                    LlmError::Config("scripted mode requires a response function".into())
                })?;
                (
                    Source::Backend(Box::new(ScriptedBackend::from_responder(responder))),
                    None,
                )
            }
            BackendMode::Replay => {
                let path = config.cassette_path.as_ref().expect("validated");
                let cassette = load_cassette(path)?;
                let fallback = if !config.strict_replay && config.endpoint_url.is_some() {
                    Some(live()?)
                } else {
                    None
                };
                let recorder = if fallback.is_some() {
                    Some(CassetteWriter::append_to(path)?)
                } else {
                    None
                };
                (
                    Source::Replay {
                        cassette,
                        strict: config.strict_replay,
                        fallback,
                    },
                    recorder,
                )
            }
        };
        Ok(LlmClient {
            mode: config.mode,
            source,
            retry,
            recorder,
        })
    }

    pub fn with_backend(
        mode: BackendMode,
        backend: Box<dyn ChatBackend>,
        retry: RetryPolicy,
    ) -> Self {
        LlmClient {
            mode,
            source: Source::Backend(backend),
            retry,
            recorder: None,
        }
    }

    pub fn with_cassette(cassette: Cassette, strict: bool) -> Self {
        LlmClient {
            mode: BackendMode::Replay,
            source: Source::Replay {
                cassette,
                strict,
                fallback: None,
            },
            retry: RetryPolicy {
                max_retries: 0,
                backoff_ms: 1,
            },
            recorder: None,
        }
    }

    pub fn recording_to(mut self, writer: CassetteWriter) -> Self {
        self.recorder = Some(writer);
        self
    }

    pub fn mode(&self) -> BackendMode {
        self.mode
    }

    fn call(&self, backend: &dyn ChatBackend, prompt: &PromptText) -> Result<Exchange, LlmError> {
        let (response, attempts) = self.retry.run(|| backend.send(&prompt.body))?;
        let exchange = Exchange::new(prompt, response, attempts);
        if let Some(recorder) = &self.recorder {
            recorder.append(&exchange)?;
        }
        Ok(exchange)
    }

    pub fn complete(&self, prompt: &PromptText) -> Result<Exchange, LlmError> {
        match &self.source {
            Source::Backend(backend) => self.call(backend.as_ref(), prompt),
            Source::Replay {
                cassette,
                strict,
                fallback,
            } => {
                let digest = prompt_digest(&prompt.body);
                if let Some(recorded) = cassette.get(&digest) {
                    return Ok(recorded.clone());
                }
                match fallback {
                    Some(live) if !*strict => self.call(live.as_ref(), prompt),
                    _ => Err(LlmError::CassetteMiss(digest)),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn prompt(body: &str) -> PromptText {
        PromptText {
            report_id: "R1".into(),
            template_name: "base".into(),
            body: body.into(),
        }
    }

    struct Flaky {
        calls: AtomicU32,
        fail_first: u32,
        error: fn() -> LlmError,
    }

    impl ChatBackend for Flaky {
        fn send(&self, _prompt: &str) -> Result<String, LlmError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
            if n <= self.fail_first {
                Err((self.error)())
            } else {
                Ok("ok".into())
            }
        }
    }

    fn policy(max_retries: u32) -> RetryPolicy {
        RetryPolicy {
            max_retries,
            backoff_ms: 1,
        }
    }

    #[test]
    fn digest_is_sha256_hex() {
        assert_eq!(
            prompt_digest("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn retries_transport_errors() {
        let flaky = Flaky {
            calls: AtomicU32::new(0),
            fail_first: 2,
            error: || LlmError::transient("boom"),
        };
        let (v, attempts) = policy(3).run(|| flaky.send("p")).unwrap();
        assert_eq!(v, "ok");
        assert_eq!(attempts, 3);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let flaky = Flaky {
            calls: AtomicU32::new(0),
            fail_first: 100,
            error: || LlmError::transient("boom"),
        };
        let err = policy(2).run(|| flaky.send("p")).unwrap_err();
        assert!(matches!(err, LlmError::Transport { attempts: 3, .. }));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn auth_is_never_retried() {
        let flaky = Flaky {
            calls: AtomicU32::new(0),
            fail_first: 100,
            error: || LlmError::Auth("bad key".into()),
        };
        let err = policy(5).run(|| flaky.send("p")).unwrap_err();
        assert!(matches!(err, LlmError::Auth(_)));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn replay_returns_recorded_response() {
        let p = prompt("hello");
        let e = Exchange::new(&p, "recorded".into(), 1);
        let (cassette, _) = Cassette::from_exchanges([e.clone()]);
        let client = LlmClient::with_cassette(cassette, true);
        assert_eq!(client.complete(&p).unwrap(), e);
        assert!(matches!(
            client.complete(&prompt("other")),
            Err(LlmError::CassetteMiss(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut live = BackendConfig::new(BackendMode::Live);
        assert!(live.validate_with(|_| Some("k".into())).is_err());
        live.endpoint_url = Some("http://localhost:1/v1/chat/completions".into());
        assert!(live.validate_with(|_| None).is_err());
        assert!(live.validate_with(|_| Some("k".into())).is_ok());
        live.temperature = Some(-1.0);
        assert!(live.validate_with(|_| Some("k".into())).is_err());

        let replay = BackendConfig::replay("/nonexistent/cassette.jsonl");
        assert!(replay.validate_with(|_| None).is_err());
    }

    #[test]
    fn scripted_requires_responder() {
        let cfg = BackendConfig::new(BackendMode::Scripted);
        assert!(matches!(
            LlmClient::from_config(&cfg, None),
            Err(LlmError::Config(_))
        ));
    }
}
