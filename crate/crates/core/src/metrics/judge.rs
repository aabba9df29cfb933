use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::backend::{CallTag, ChatBackend, ChatMessage, ChatRequest};
use crate::prompts::{Bindings, PromptTemplate};
use crate::protocol::{EventKind, ParseResult, Transcript};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeConfig {
    pub model_id: String,
    pub temperature: f64,
    /// Transcripts judged together in one call.
    pub batch_size: usize,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self { model_id: "judge".into(), temperature: 0.0, batch_size: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMetrics {
    pub evidence_sentences: u64,
    pub noise_sentences: u64,
    /// noise / evidence; `None` when the judge found no evidence sentences.
    pub ratio: Option<f64>,
    pub judge_model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceCoverage {
    pub identified: u64,
    pub missed: u64,
    pub coverage: Option<f64>,
    pub judge_model_id: String,
}

static EVIDENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bevidence\s*[=:]\s*(\d+)").unwrap());
static NOISE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bnoise\s*[=:]\s*(\d+)").unwrap());
static IDENTIFIED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bidentified\s*[=:]\s*(\d+)").unwrap());
static MISSED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bmissed\s*[=:]\s*(\d+)").unwrap());

fn last_count(re: &Regex, text: &str) -> Option<u64> {
    re.captures_iter(text).last().and_then(|c| c[1].parse().ok())
}

/// Extracts `evidence=<n> noise=<m>` from a judge reply.
pub fn parse_noise_reply(text: &str) -> Result<(u64, u64), MetricsError> {
    match (last_count(&EVIDENCE, text), last_count(&NOISE, text)) {
        (Some(e), Some(n)) => Ok((e, n)),
        _ => Err(MetricsError::JudgeOutputUnparsable(text.chars().take(200).collect())),
    }
}

/// Extracts `identified=<n> missed=<m>` from a judge reply.
pub fn parse_evidence_reply(text: &str) -> Result<(u64, u64), MetricsError> {
    match (last_count(&IDENTIFIED, text), last_count(&MISSED, text)) {
        (Some(i), Some(m)) => Ok((i, m)),
        _ => Err(MetricsError::JudgeOutputUnparsable(text.chars().take(200).collect())),
    }
}

/// Agent outputs that passed their grammar, grouped per transcript.
pub fn render_records(transcripts: &[Transcript]) -> String {
    let mut out = String::new();
    for (n, t) in transcripts.iter().enumerate() {
        out.push_str(&format!("Record {} (case {}):\n", n + 1, t.case_id));
        let mut pending: Option<(String, &str)> = None;
        for e in &t.events {
            match &e.kind {
                EventKind::ModelCall(c) => pending = Some((c.role.display_name(), c.response.as_str())),
                EventKind::ParseOutcome(p) => {
                    if let (Some((who, text)), ParseResult::Success { .. }) = (pending.take(), &p.result) {
                        out.push_str(&format!("{who}: {}\n", text.trim()));
                    }
                }
                _ => {}
            }
        }
        out.push('\n');
    }
    out.trim_end().to_string()
}

async fn ask_judge(
    backend: &dyn ChatBackend,
    template: &PromptTemplate,
    bindings: &Bindings,
    config: &JudgeConfig,
) -> Result<String, MetricsError> {
    let prompt = template.render(bindings).map_err(|e| MetricsError::JudgePrompt(e.to_string()))?;
    let request = ChatRequest {
        model_id: config.model_id.clone(),
        messages: vec![ChatMessage::user(prompt)],
        temperature: config.temperature,
        max_output_tokens: None,
        tag: Some(CallTag { agent: "judge".into(), call_id: "judge".into() }),
    };
    let response = backend.complete(&request).await.map_err(MetricsError::JudgeUnavailable)?;
    Ok(response.text)
}

/// Noise-to-evidence sentence ratio over a batch of transcripts, with the
/// sentence classification delegated to a judge model.
pub async fn judge_noise_ratio(
    transcripts: &[Transcript],
    backend: &dyn ChatBackend,
    template: &PromptTemplate,
    config: &JudgeConfig,
) -> Result<NoiseMetrics, MetricsError> {
    let bindings = Bindings::new().set("TRANSCRIPT", render_records(transcripts));
    let reply = ask_judge(backend, template, &bindings, config).await?;
    let (evidence, noise) = parse_noise_reply(&reply)?;
    Ok(NoiseMetrics {
        evidence_sentences: evidence,
        noise_sentences: noise,
        ratio: (evidence > 0).then(|| noise as f64 / evidence as f64),
        judge_model_id: config.model_id.clone(),
    })
}

pub async fn judge_evidence_coverage(
    transcript: &Transcript,
    question: &str,
    reference_answer: &str,
    backend: &dyn ChatBackend,
    template: &PromptTemplate,
    config: &JudgeConfig,
) -> Result<EvidenceCoverage, MetricsError> {
    let bindings = Bindings::new()
        .set("QUESTION", question)
        .set("REFERENCE ANSWER", reference_answer)
        .set("TRANSCRIPT", render_records(std::slice::from_ref(transcript)));
    let reply = ask_judge(backend, template, &bindings, config).await?;
    let (identified, missed) = parse_evidence_reply(&reply)?;
    let total = identified + missed;
    Ok(EvidenceCoverage {
        identified,
        missed,
        coverage: (total > 0).then(|| identified as f64 / total as f64),
        judge_model_id: config.model_id.clone(),
    })
}
