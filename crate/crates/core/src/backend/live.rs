use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tracing::{debug, warn};

use super::{BackendError, ChatBackend, ChatMessage, ChatRequest, ChatResponse, ContentPart, Usage};

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt; `max_retries + 1` attempts in total.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            multiplier: 2.0,
            max_backoff: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        let secs = self.initial_backoff.as_secs_f64() * self.multiplier.powi(retry as i32);
        Duration::from_secs_f64(secs.min(self.max_backoff.as_secs_f64()))
    }
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Base URL up to and including the API version, e.g. `http://localhost:11434/v1`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:11434/v1".into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            max_in_flight: 8,
        }
    }
}

/// HTTP client for any server exposing an OpenAI-style `/chat/completions`.
pub struct OpenAiCompatibleBackend {
    client: reqwest::Client,
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    in_flight: Arc<Semaphore>,
}

enum Attempt {
    Transient(String),
    Fatal(BackendError),
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<Value>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl OpenAiCompatibleBackend {
    pub fn new(config: LiveConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::InvalidRequest(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key: config.api_key,
            retry: config.retry,
            in_flight: Arc::new(Semaphore::new(config.max_in_flight.max(1))),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    async fn attempt(&self, body: &Value, request: &ChatRequest) -> Result<(String, Usage), Attempt> {
        let mut http = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let resp = http.send().await.map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| Attempt::Transient(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(BackendError::Rejected { status: status.as_u16(), body: text }));
        }
        parse_wire_response(&text, request).map_err(Attempt::Fatal)
    }
}

fn parse_wire_response(body: &str, request: &ChatRequest) -> Result<(String, Usage), BackendError> {
    let wire: WireResponse = serde_json::from_str(body)
        .map_err(|e| BackendError::ContractViolation(format!("{e}")))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::ContractViolation("response has no choices".into()))?;
    let text = match choice.message.content {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s,
        // Some servers answer with content parts.
        Some(Value::Array(parts)) => parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        Some(other) => {
            return Err(BackendError::ContractViolation(format!("unexpected content type: {other}")));
        }
    };
    let usage = match wire.usage {
        Some(WireUsage { prompt_tokens: Some(i), completion_tokens: Some(o) }) => Usage::new(i, o),
        _ => Usage::estimate(request, &text),
    };
    Ok((text, usage))
}

/// Request body in the chat-completions wire shape. Images become base64
/// data URLs.
pub(crate) fn wire_body(request: &ChatRequest) -> Value {
    let messages: Vec<Value> = request.messages.iter().map(wire_message).collect();
    let mut body = json!({
        "model": request.model_id,
        "messages": messages,
        "temperature": request.temperature,
        "stream": false,
    });
    if let Some(max) = request.max_output_tokens {
        body["max_tokens"] = json!(max);
    }
    body
}

fn wire_message(m: &ChatMessage) -> Value {
    let has_image = m.parts.iter().any(|p| matches!(p, ContentPart::Image(_)));
    let content = if has_image {
        Value::Array(
            m.parts
                .iter()
                .map(|p| match p {
                    ContentPart::Text(t) => json!({ "type": "text", "text": t }),
                    ContentPart::Image(img) => {
                        let data = base64::engine::general_purpose::STANDARD.encode(&img.bytes[..]);
                        json!({
                            "type": "image_url",
                            "image_url": { "url": format!("data:{};base64,{data}", img.media_type) },
                        })
                    }
                })
                .collect(),
        )
    } else {
        Value::String(m.text())
    };
    json!({ "role": m.role.as_str(), "content": content })
}

#[async_trait]
impl ChatBackend for OpenAiCompatibleBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let body = wire_body(request);
        let _permit = self
            .in_flight
            .acquire()
            .await
            .map_err(|_| BackendError::Unavailable { attempts: 0, reason: "client shut down".into() })?;
        let started = Instant::now();
        let mut last_reason = String::new();
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                tokio::time::sleep(self.retry.backoff(attempt - 1)).await;
            }
            match self.attempt(&body, request).await {
                Ok((text, usage)) => {
                    debug!(agent = request.agent(), attempt, "chat completion ok");
                    return Ok(ChatResponse { text, usage, latency: started.elapsed() });
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(reason)) => {
                    warn!(agent = request.agent(), attempt, %reason, "transient backend failure");
                    last_reason = reason;
                }
            }
        }
        Err(BackendError::Unavailable { attempts: self.retry.max_retries + 1, reason: last_reason })
    }
}
