//! Chat-completion backends.
//!
//! Every backend implements [`ChatBackend`]. The crate ships a live
//! OpenAI-compatible HTTP client ([`OpenAiCompatibleBackend`]), a scripted
//! backend for tests and synthetic benchmarks ([`ScriptedBackend`]), and a
//! record/replay pair ([`RecordingBackend`], [`ReplayBackend`]).

mod live;
mod replay;
mod scripted;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use live::{LiveConfig, OpenAiCompatibleBackend, RetryPolicy};
pub use replay::{record_session, replay_session, RecordedCall, Recording, RecordingBackend, ReplayBackend};
pub use scripted::{Matcher, ScriptEntry, ScriptedBackend};

pub const RECORDING_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("malformed response from backend: {0}")]
    ContractViolation(String),
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no script entry matches call {position} of agent {agent:?}")]
    ScriptUnmatched { agent: String, position: usize },
    #[error("replay diverged at call {position}: {detail}")]
    ReplayDivergence { position: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

impl MessageRole {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::System => "system",
            Self::User => "user",
            Self::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePart {
    pub media_type: String,
    pub bytes: Arc<[u8]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentPart {
    Text(String),
    Image(ImagePart),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub parts: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: MessageRole::User, parts: vec![ContentPart::Text(text.into())] }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: MessageRole::Assistant, parts: vec![ContentPart::Text(text.into())] }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self { role: MessageRole::System, parts: vec![ContentPart::Text(text.into())] }
    }

    pub fn with_image(mut self, media_type: impl Into<String>, bytes: Arc<[u8]>) -> Self {
        self.parts.push(ContentPart::Image(ImagePart { media_type: media_type.into(), bytes }));
        self
    }

    /// Concatenated text parts.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text(t) => Some(t.as_str()),
                ContentPart::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_bytes(&self) -> Option<usize> {
        let total: usize = self
            .parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::Image(img) => Some(img.bytes.len()),
                ContentPart::Text(_) => None,
            })
            .sum();
        self.parts.iter().any(|p| matches!(p, ContentPart::Image(_))).then_some(total)
    }
}

/// Identifies which agent issued a call. Never sent over the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallTag {
    pub agent: String,
    /// Stable identifier whose lexical order follows the protocol's logical
    /// call order, independent of how concurrent calls interleave.
    pub call_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: Option<u32>,
    pub tag: Option<CallTag>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("request has no messages".into()));
        }
        for m in &self.messages {
            if m.role != MessageRole::User && m.parts.iter().any(|p| matches!(p, ContentPart::Image(_))) {
                return Err(BackendError::InvalidRequest(format!(
                    "image part in a {} message",
                    m.role.as_str()
                )));
            }
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }

    pub fn agent(&self) -> &str {
        self.tag.as_ref().map(|t| t.agent.as_str()).unwrap_or("")
    }

    /// All text in the request, messages separated by blank lines.
    pub fn full_text(&self) -> String {
        self.messages.iter().map(ChatMessage::text).collect::<Vec<_>>().join("\n\n")
    }

    /// Audit digest: full prompt text, image sizes and a content hash.
    /// The tag does not contribute to the hash.
    pub fn digest(&self) -> RequestDigest {
        let mut hasher = Sha256::new();
        hasher.update(self.model_id.as_bytes());
        hasher.update([0]);
        hasher.update(self.temperature.to_bits().to_le_bytes());
        hasher.update(self.max_output_tokens.map_or(u64::MAX, u64::from).to_le_bytes());
        for m in &self.messages {
            hasher.update(m.role.as_str().as_bytes());
            for part in &m.parts {
                match part {
                    ContentPart::Text(t) => {
                        hasher.update([1]);
                        hasher.update((t.len() as u64).to_le_bytes());
                        hasher.update(t.as_bytes());
                    }
                    ContentPart::Image(img) => {
                        hasher.update([2]);
                        hasher.update(img.media_type.as_bytes());
                        hasher.update((img.bytes.len() as u64).to_le_bytes());
                        hasher.update(&img.bytes[..]);
                    }
                }
            }
        }
        RequestDigest {
            sha256: hex::encode(hasher.finalize()),
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            messages: self
                .messages
                .iter()
                .map(|m| DigestMessage { role: m.role, text: m.text(), image_bytes: m.image_bytes() })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigestMessage {
    pub role: MessageRole,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_bytes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestDigest {
    pub sha256: String,
    pub model_id: String,
    pub temperature: f64,
    pub messages: Vec<DigestMessage>,
}

impl RequestDigest {
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Set when the server omitted usage and counts came from [`estimate_tokens`].
    #[serde(default)]
    pub estimated: bool,
}

impl Usage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self { input_tokens, output_tokens, estimated: false }
    }

    pub fn estimate(request: &ChatRequest, response_text: &str) -> Self {
        Self {
            input_tokens: estimate_tokens(&request.full_text()),
            output_tokens: estimate_tokens(response_text),
            estimated: true,
        }
    }
}

/// Fallback token estimate: character count divided by four, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub latency: Duration,
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

#[async_trait]
impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request).await
    }
}
