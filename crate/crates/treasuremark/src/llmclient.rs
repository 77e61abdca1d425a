//! Minimal client for chat-completion-compatible HTTP endpoints.
//!
//! A single wire dialect covers the annotator, judge and generator
//! endpoints; the model name is data. The transport is a seam: production
//! uses blocking HTTP, tests and offline runs inject scripted responses
//! (a `mock:<path>` base URL replays a JSONL script file).

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

pub const DEFAULT_API_KEY_ENV: &str = "MARKER_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub temperature: f64,
    /// First retry delay; doubles per attempt, plus jitter.
    pub backoff_base_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            model_name: String::new(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            timeout_secs: 60,
            max_retries: 3,
            max_in_flight: 4,
            temperature: 0.0,
            backoff_base_ms: 1000,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.timeout_secs == 0 {
            return Err(ClientError::Config("timeout must be > 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(ClientError::Config("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub system: Option<String>,
    pub user: String,
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    /// Exactly the first candidate's content, no post-processing.
    pub text: String,
    pub finish_reason: Option<String>,
    pub usage: Option<Usage>,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("authentication failed (status {status})")]
    AuthFailure { status: u16 },
    #[error("retries exhausted after {attempts} attempts: {last_error}")]
    ExhaustedRetries { attempts: u32, last_error: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Outgoing wire request. Debug intentionally omits the API key so request
/// logging can never leak it.
pub struct WireRequest {
    pub url: String,
    pub api_key: Option<String>,
    pub body: serde_json::Value,
    pub timeout: Duration,
}

impl std::fmt::Debug for WireRequest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WireRequest")
            .field("url", &self.url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("body", &self.body)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct WireResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("{0}")]
    Other(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &WireRequest) -> Result<WireResponse, TransportError>;
}

/// Blocking HTTP transport.
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn send(&self, request: &WireRequest) -> Result<WireResponse, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(request.timeout)
            .build()
            .map_err(|e| TransportError::Other(e.to_string()))?;
        let mut builder = client.post(&request.url).json(&request.body);
        if let Some(key) = &request.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(WireResponse { status, body })
    }
}

/// One scripted transport reply.
#[derive(Debug, Clone, Deserialize)]
pub struct ScriptedReply {
    #[serde(default)]
    pub status: Option<u16>,
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default)]
    pub body: Option<String>,
    #[serde(default)]
    pub timeout: bool,
}

impl ScriptedReply {
    pub fn content(text: &str) -> Self {
        Self {
            status: None,
            content: Some(text.to_string()),
            body: None,
            timeout: false,
        }
    }

    pub fn status(status: u16, body: &str) -> Self {
        Self {
            status: Some(status),
            content: None,
            body: Some(body.to_string()),
            timeout: false,
        }
    }
}

/// Replays a fixed sequence of replies and instruments concurrency.
pub struct ScriptedTransport {
    replies: Mutex<VecDeque<ScriptedReply>>,
    /// When the script runs out, keep replaying this reply (None: error).
    fallback: Option<ScriptedReply>,
    hold: Option<Duration>,
    in_flight: AtomicUsize,
    max_in_flight_observed: AtomicUsize,
    calls: AtomicUsize,
}

impl ScriptedTransport {
    pub fn new(replies: Vec<ScriptedReply>) -> Self {
        Self {
            replies: Mutex::new(replies.into()),
            fallback: None,
            hold: None,
            in_flight: AtomicUsize::new(0),
            max_in_flight_observed: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    /// Reply to use once the scripted sequence is exhausted.
    pub fn with_fallback(mut self, reply: ScriptedReply) -> Self {
        self.fallback = Some(reply);
        self
    }

    /// Hold each request open briefly so overlapping calls are observable.
    pub fn with_hold(mut self, hold: Duration) -> Self {
        self.hold = Some(hold);
        self
    }

    /// Load a reply script from a JSONL file: one reply object per line.
    pub fn from_script_file(path: &std::path::Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut replies = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let reply: ScriptedReply = serde_json::from_str(line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            replies.push(reply);
        }
        Ok(Self::new(replies))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight_observed(&self) -> usize {
        self.max_in_flight_observed.load(Ordering::SeqCst)
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, _request: &WireRequest) -> Result<WireResponse, TransportError> {
        let current = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight_observed
            .fetch_max(current, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(hold) = self.hold {
            std::thread::sleep(hold);
        }
        let reply = {
            let mut replies = self.replies.lock().unwrap();
            replies.pop_front().or_else(|| self.fallback.clone())
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        let Some(reply) = reply else {
            return Err(TransportError::Other("scripted replies exhausted".into()));
        };
        if reply.timeout {
            return Err(TransportError::Timeout);
        }
        if let Some(content) = reply.content {
            let body = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": content},
                              "finish_reason": "stop"}],
                "usage": {"prompt_tokens": 0, "completion_tokens": 0}
            });
            return Ok(WireResponse {
                status: 200,
                body: body.to_string(),
            });
        }
        Ok(WireResponse {
            status: reply.status.unwrap_or(200),
            body: reply.body.unwrap_or_default(),
        })
    }
}

pub struct Client {
    cfg: EndpointConfig,
    transport: Arc<dyn Transport>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Debug, Deserialize)]
struct WireBody {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

impl Client {
    /// Build a client for the config. `mock:<path>` base URLs get a
    /// scripted transport reading the file; anything else uses HTTP.
    pub fn new(cfg: EndpointConfig) -> Result<Self, ClientError> {
        cfg.validate()?;
        if let Some(path) = cfg.base_url.strip_prefix("mock:") {
            let transport = ScriptedTransport::from_script_file(std::path::Path::new(path))
                .map_err(|e| ClientError::Config(format!("cannot read mock script: {e}")))?;
            return Ok(Self {
                cfg,
                transport: Arc::new(transport),
            });
        }
        Ok(Self {
            cfg,
            transport: Arc::new(HttpTransport),
        })
    }

    pub fn with_transport(cfg: EndpointConfig, transport: Arc<dyn Transport>) -> Result<Self, ClientError> {
        cfg.validate()?;
        Ok(Self { cfg, transport })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn wire_request(&self, request: &CompletionRequest) -> WireRequest {
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(serde_json::json!({"role": "system", "content": system}));
        }
        messages.push(serde_json::json!({"role": "user", "content": request.user}));
        let body = serde_json::json!({
            "model": self.cfg.model_name,
            "messages": messages,
            "temperature": request.temperature.unwrap_or(self.cfg.temperature),
        });
        WireRequest {
            url: self.cfg.base_url.clone(),
            api_key: std::env::var(&self.cfg.api_key_env).ok(),
            body,
            timeout: Duration::from_secs(self.cfg.timeout_secs),
        }
    }

    /// Send one completion request, retrying 429/5xx/timeouts with
    /// exponential backoff. 401/403 fail immediately.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ClientError> {
        let wire = self.wire_request(request);
        let mut retries = 0u32;
        loop {
            let attempt_result = self.transport.send(&wire);
            let retryable_error = match attempt_result {
                Ok(response) if response.status == 200 => {
                    let mut parsed = parse_body(&response.body)?;
                    parsed.retries = retries;
                    return Ok(parsed);
                }
                Ok(response) if matches!(response.status, 401 | 403) => {
                    return Err(ClientError::AuthFailure {
                        status: response.status,
                    });
                }
                Ok(response) if response.status == 429 || response.status >= 500 => {
                    format!("status {}", response.status)
                }
                Ok(response) => {
                    return Err(ClientError::Transport(format!(
                        "unexpected status {}",
                        response.status
                    )));
                }
                Err(TransportError::Timeout) => "timeout".to_string(),
                Err(TransportError::Other(e)) => return Err(ClientError::Transport(e)),
            };
            if retries >= self.cfg.max_retries {
                return Err(ClientError::ExhaustedRetries {
                    attempts: retries + 1,
                    last_error: retryable_error,
                });
            }
            std::thread::sleep(self.backoff_delay(retries));
            retries += 1;
        }
    }

    /// Base delay doubles per retry; jitter adds up to 25% on top.
    fn backoff_delay(&self, retries_so_far: u32) -> Duration {
        use rand::Rng;
        let base = self.cfg.backoff_base_ms.saturating_mul(1 << retries_so_far.min(16));
        let jitter = rand::thread_rng().gen_range(0..=base / 4 + 1);
        Duration::from_millis(base + jitter)
    }

    /// Run requests with at most `max_in_flight` concurrent calls. Results
    /// carry the original indices; partial failure is per-item.
    pub fn complete_batch(
        &self,
        requests: &[CompletionRequest],
    ) -> Vec<(usize, Result<CompletionResponse, ClientError>)> {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<CompletionResponse, ClientError>>>> =
            Mutex::new((0..requests.len()).map(|_| None).collect());
        let workers = self.cfg.max_in_flight.min(requests.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::SeqCst);
                    if idx >= requests.len() {
                        break;
                    }
                    let result = self.complete(&requests[idx]);
                    results.lock().unwrap()[idx] = Some(result);
                });
            }
        });
        results
            .into_inner()
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, r)| (i, r.expect("every index processed")))
            .collect()
    }
}

fn parse_body(body: &str) -> Result<CompletionResponse, ClientError> {
    let parsed: WireBody =
        serde_json::from_str(body).map_err(|e| ClientError::MalformedResponse(e.to_string()))?;
    let first = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ClientError::MalformedResponse("no choices in response".into()))?;
    Ok(CompletionResponse {
        text: first.message.content,
        finish_reason: first.finish_reason,
        usage: parsed.usage.map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        }),
        retries: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_cfg() -> EndpointConfig {
        EndpointConfig {
            base_url: "http://unused".into(),
            model_name: "test-model".into(),
            backoff_base_ms: 1,
            max_retries: 2,
            ..EndpointConfig::default()
        }
    }

    fn client_with(replies: Vec<ScriptedReply>) -> (Client, Arc<ScriptedTransport>) {
        let transport = Arc::new(ScriptedTransport::new(replies));
        let client = Client::with_transport(test_cfg(), transport.clone()).unwrap();
        (client, transport)
    }

    fn request() -> CompletionRequest {
        CompletionRequest {
            system: None,
            user: "hello".into(),
            temperature: None,
        }
    }

    #[test]
    fn returns_first_choice_content() {
        let (client, _) = client_with(vec![ScriptedReply::content("hi back")]);
        let response = client.complete(&request()).unwrap();
        assert_eq!(response.text, "hi back");
        assert_eq!(response.retries, 0);
    }

    #[test]
    fn retries_on_429_then_succeeds() {
        let (client, transport) = client_with(vec![
            ScriptedReply::status(429, "slow down"),
            ScriptedReply::content("ok"),
        ]);
        let response = client.complete(&request()).unwrap();
        assert_eq!(response.text, "ok");
        assert_eq!(response.retries, 1);
        assert_eq!(transport.calls(), 2);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let (client, transport) = client_with(vec![ScriptedReply::status(401, "no")]);
        let err = client.complete(&request()).unwrap_err();
        assert_eq!(err, ClientError::AuthFailure { status: 401 });
        assert_eq!(transport.calls(), 1);
    }

    #[test]
    fn persistent_500_exhausts_retries() {
        let transport = Arc::new(
            ScriptedTransport::new(vec![]).with_fallback(ScriptedReply::status(500, "boom")),
        );
        let client = Client::with_transport(test_cfg(), transport.clone()).unwrap();
        let err = client.complete(&request()).unwrap_err();
        assert!(matches!(err, ClientError::ExhaustedRetries { attempts: 3, .. }));
        assert_eq!(transport.calls(), 3);
    }

    #[test]
    fn timeout_is_retryable() {
        let (client, _) = client_with(vec![
            ScriptedReply {
                status: None,
                content: None,
                body: None,
                timeout: true,
            },
            ScriptedReply::content("recovered"),
        ]);
        assert_eq!(client.complete(&request()).unwrap().text, "recovered");
    }

    #[test]
    fn malformed_body_is_an_error() {
        let (client, _) = client_with(vec![ScriptedReply::status(200, "not json")]);
        assert!(matches!(
            client.complete(&request()),
            Err(ClientError::MalformedResponse(_))
        ));
    }

    #[test]
    fn batch_is_index_stable_with_partial_failure() {
        let transport = Arc::new(
            ScriptedTransport::new(vec![]).with_fallback(ScriptedReply::content("ok")),
        );
        let mut cfg = test_cfg();
        cfg.max_in_flight = 1; // deterministic reply order
        let client = Client::with_transport(cfg, transport).unwrap();
        let results = client.complete_batch(&vec![request(); 3]);
        assert_eq!(results.len(), 3);
        for (i, (idx, result)) in results.iter().enumerate() {
            assert_eq!(i, *idx);
            assert!(result.is_ok());
        }
        assert!(client.complete_batch(&[]).is_empty());
    }

    #[test]
    fn batch_respects_max_in_flight() {
        let transport = Arc::new(
            ScriptedTransport::new(vec![])
                .with_fallback(ScriptedReply::content("ok"))
                .with_hold(Duration::from_millis(20)),
        );
        let mut cfg = test_cfg();
        cfg.max_in_flight = 2;
        let client = Client::with_transport(cfg, transport.clone()).unwrap();
        let results = client.complete_batch(&vec![request(); 5]);
        assert!(results.iter().all(|(_, r)| r.is_ok()));
        assert!(transport.max_in_flight_observed() <= 2);
        assert_eq!(transport.calls(), 5);
    }

    #[test]
    fn backoff_is_monotone_pre_jitter() {
        let client = client_with(vec![]).0;
        let base = |r| client.cfg.backoff_base_ms * (1u64 << r);
        assert!(base(0) <= base(1) && base(1) <= base(2));
    }

    #[test]
    fn wire_request_debug_never_shows_key() {
        let wire = WireRequest {
            url: "http://x".into(),
            api_key: Some("super-secret-key".into()),
            body: serde_json::json!({}),
            timeout: Duration::from_secs(1),
        };
        let dump = format!("{wire:?}");
        assert!(!dump.contains("super-secret-key"));
        assert!(dump.contains("<redacted>"));
    }
}
