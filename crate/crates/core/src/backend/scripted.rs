use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Usage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    /// Matches calls issued by `agent`. With `position`, only that agent's
    /// n-th call (1-based, parse retries included); without, every call.
    ByRoleSequence { agent: String, position: Option<usize> },
    /// Matches any request whose text contains the pattern.
    ByPromptSubstring(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    pub matcher: Matcher,
    pub response_text: String,
    /// `None` uses the character-count estimator and marks usage as estimated.
    pub synthetic_usage: Option<(u64, u64)>,
}

/// Deterministic backend answering from a fixed script.
///
/// Entries are tried in order and the first match wins. Matching depends
/// only on the request and on how many calls its agent has made so far, so
/// concurrent calls from different agents cannot change the outcome.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    calls_per_agent: Mutex<HashMap<String, usize>>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self { entries, calls_per_agent: Mutex::default() }
    }

    pub fn push(&mut self, entry: ScriptEntry) -> &mut Self {
        self.entries.push(entry);
        self
    }

    /// Answer the `position`-th call of `agent`.
    pub fn respond_at(mut self, agent: impl Into<String>, position: usize, text: impl Into<String>) -> Self {
        self.entries.push(ScriptEntry {
            matcher: Matcher::ByRoleSequence { agent: agent.into(), position: Some(position) },
            response_text: text.into(),
            synthetic_usage: None,
        });
        self
    }

    /// Answer every call of `agent` not matched by an earlier entry.
    pub fn respond_always(mut self, agent: impl Into<String>, text: impl Into<String>) -> Self {
        self.entries.push(ScriptEntry {
            matcher: Matcher::ByRoleSequence { agent: agent.into(), position: None },
            response_text: text.into(),
            synthetic_usage: None,
        });
        self
    }

    pub fn respond_to_prompt(mut self, pattern: impl Into<String>, text: impl Into<String>) -> Self {
        self.entries.push(ScriptEntry {
            matcher: Matcher::ByPromptSubstring(pattern.into()),
            response_text: text.into(),
            synthetic_usage: None,
        });
        self
    }

    /// Give every entry the same synthetic usage.
    pub fn with_uniform_usage(mut self, input_tokens: u64, output_tokens: u64) -> Self {
        for e in &mut self.entries {
            e.synthetic_usage = Some((input_tokens, output_tokens));
        }
        self
    }

    fn resolve(&self, request: &ChatRequest) -> Result<&ScriptEntry, BackendError> {
        let agent = request.agent().to_string();
        let position = {
            let mut counts = self.calls_per_agent.lock().expect("script counter poisoned");
            let n = counts.entry(agent.clone()).or_insert(0);
            *n += 1;
            *n
        };
        let mut text: Option<String> = None;
        self.entries
            .iter()
            .find(|e| match &e.matcher {
                Matcher::ByRoleSequence { agent: a, position: p } => {
                    *a == agent && p.is_none_or(|p| p == position)
                }
                Matcher::ByPromptSubstring(pat) => text.get_or_insert_with(|| request.full_text()).contains(pat.as_str()),
            })
            .ok_or(BackendError::ScriptUnmatched { agent, position })
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let entry = self.resolve(request)?;
        let usage = match entry.synthetic_usage {
            Some((i, o)) => Usage::new(i, o),
            None => Usage::estimate(request, &entry.response_text),
        };
        Ok(ChatResponse { text: entry.response_text.clone(), usage, latency: Duration::ZERO })
    }
}
