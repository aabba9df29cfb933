use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, RequestDigest, Usage, RECORDING_SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedCall {
    /// 1-based position in the session.
    pub position: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_id: Option<String>,
    pub request: RequestDigest,
    pub response_text: String,
    pub usage: Usage,
}

/// One recorded session: ordered (request digest, response, usage) triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub schema_version: u32,
    pub calls: Vec<RecordedCall>,
}

impl Default for Recording {
    fn default() -> Self {
        Self { schema_version: RECORDING_SCHEMA_VERSION, calls: Vec::new() }
    }
}

impl Recording {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }
}

/// Wraps a backend and records every successful call.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    calls: Mutex<Vec<RecordedCall>>,
}

pub fn record_session(inner: Arc<dyn ChatBackend>) -> RecordingBackend {
    RecordingBackend { inner, calls: Mutex::default() }
}

impl RecordingBackend {
    /// Snapshot of the session so far. When every call is tagged, calls are
    /// ordered by call id so concurrent calls record deterministically.
    pub fn recording(&self) -> Recording {
        let mut calls = self.calls.lock().expect("recording poisoned").clone();
        if calls.iter().all(|c| c.call_id.is_some()) {
            calls.sort_by(|a, b| a.call_id.cmp(&b.call_id));
        }
        for (i, c) in calls.iter_mut().enumerate() {
            c.position = i + 1;
        }
        Recording { schema_version: RECORDING_SCHEMA_VERSION, calls }
    }
}

#[async_trait]
impl ChatBackend for RecordingBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let response = self.inner.complete(request).await?;
        let mut calls = self.calls.lock().expect("recording poisoned");
        let position = calls.len() + 1;
        calls.push(RecordedCall {
            position,
            call_id: request.tag.as_ref().map(|t| t.call_id.clone()),
            request: request.digest(),
            response_text: response.text.clone(),
            usage: response.usage,
        });
        Ok(response)
    }
}

/// Serves a recording back. Tagged requests are matched to the recorded call
/// with the same call id; untagged requests are matched by arrival order.
/// Either way the prompt digest must equal the recorded one.
pub struct ReplayBackend {
    recording: Recording,
    cursor: Mutex<usize>,
}

pub fn replay_session(recording: Recording) -> ReplayBackend {
    ReplayBackend { recording, cursor: Mutex::new(0) }
}

impl ReplayBackend {
    fn lookup(&self, request: &ChatRequest) -> Result<&RecordedCall, BackendError> {
        let calls = &self.recording.calls;
        let index = match request.tag.as_ref() {
            Some(tag) => calls.iter().position(|c| c.call_id.as_deref() == Some(tag.call_id.as_str())).ok_or_else(|| {
                BackendError::ReplayDivergence {
                    position: calls.len() + 1,
                    detail: format!("call {:?} is not in the recording", tag.call_id),
                }
            })?,
            None => {
                let mut cursor = self.cursor.lock().expect("replay cursor poisoned");
                let i = *cursor;
                *cursor += 1;
                if i >= calls.len() {
                    return Err(BackendError::ReplayDivergence {
                        position: i + 1,
                        detail: format!("recording has only {} call(s)", calls.len()),
                    });
                }
                i
            }
        };
        let recorded = &calls[index];
        let digest = request.digest().sha256;
        if recorded.request.sha256 != digest {
            return Err(BackendError::ReplayDivergence {
                position: index + 1,
                detail: format!("prompt digest {digest} differs from recorded {}", recorded.request.sha256),
            });
        }
        Ok(recorded)
    }
}

#[async_trait]
impl ChatBackend for ReplayBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let call = self.lookup(request)?;
        Ok(ChatResponse { text: call.response_text.clone(), usage: call.usage, latency: Duration::ZERO })
    }
}
