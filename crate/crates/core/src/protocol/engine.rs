use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::{debug, info_span, Instrument};

use super::routing::{route_after_tier1, route_after_tier2};
use super::transcript::{EventKind, ModelCall, ParseOutcome, ParseResult, Transcript};
use super::types::{
    AgentReport, AgentRole, Inquiry, InquiryResponse, MedicalCase, OptionLetter, RiskReport, Route,
    Verdict,
};
use super::ProtocolError;
use crate::backend::{BackendError, CallTag, ChatBackend, ChatMessage, ChatRequest};
use crate::metrics::UsageLedger;
use crate::prompts::{corrective_instruction, parse_report, Bindings, ParseError, ParsedReport, PromptContext, Stage, TemplateSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub model_id: String,
    pub tier1_temperature: f64,
    pub tier2_temperature: f64,
    pub tier3_critic_temperature: f64,
    /// Leader inquiry and critic responses.
    pub tier3_inquiry_temperature: f64,
    pub arbitration_temperature: f64,
    /// Regenerations allowed per agent output after a grammar failure.
    pub max_parse_retries: u32,
    pub max_output_tokens: Option<u32>,
    pub prompt: PromptContext,
    /// Run independent call pairs concurrently.
    pub concurrent_calls: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            model_id: "default".into(),
            tier1_temperature: 0.7,
            tier2_temperature: 0.5,
            tier3_critic_temperature: 0.5,
            tier3_inquiry_temperature: 0.1,
            arbitration_temperature: 0.1,
            max_parse_retries: 2,
            max_output_tokens: None,
            prompt: PromptContext::default(),
            concurrent_calls: true,
        }
    }
}

impl EngineConfig {
    pub fn temperature(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Tier1 => self.tier1_temperature,
            Stage::Tier2 => self.tier2_temperature,
            Stage::Critic => self.tier3_critic_temperature,
            Stage::LeaderInquiry | Stage::CriticResponse => self.tier3_inquiry_temperature,
            Stage::LeaderVerdict => self.arbitration_temperature,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub verdict: Verdict,
    pub transcript: Transcript,
    pub ledger: UsageLedger,
}

/// A case that ended in an error, with everything recorded up to that point.
#[derive(Debug, Clone)]
pub struct CaseFailure {
    pub error: ProtocolError,
    pub transcript: Transcript,
}

impl fmt::Display for CaseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "case {}: {}", self.transcript.case_id, self.error)
    }
}

impl std::error::Error for CaseFailure {}

#[derive(Debug, Clone)]
pub struct Tier3Outcome {
    pub verdict: Verdict,
    pub risk_reports: Vec<RiskReport>,
    pub inquiries: Vec<Inquiry>,
    pub responses: Vec<InquiryResponse>,
}

/// Why an output was refused even though the model answered.
#[derive(Debug, Clone, PartialEq)]
enum Rejection {
    Grammar(ParseError),
    NotAnOption(OptionLetter),
    InquiryTarget { expert: u8, expected: OptionLetter, found: OptionLetter },
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Grammar(e) => write!(f, "{e}"),
            Self::NotAnOption(l) => write!(f, "answer {l} is not one of the case's options"),
            Self::InquiryTarget { expert, expected, found } => {
                write!(f, "inquiry to expert {expert} reviews {found}, but that expert audits {expected}")
            }
        }
    }
}

impl Rejection {
    fn is_inquiry_mismatch(&self) -> bool {
        matches!(
            self,
            Self::InquiryTarget { .. }
                | Self::Grammar(ParseError::WrongArity(_) | ParseError::DuplicateExpert(_) | ParseError::UnknownExpert(_))
        )
    }
}

struct CallSpec {
    role: AgentRole,
    stage: Stage,
    messages: Vec<ChatMessage>,
}

/// Runs the three-tier deliberation for single cases. Cheap to clone and
/// safe to share across concurrent workers; all per-case state lives in the
/// case's own transcript.
#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    templates: Arc<TemplateSet>,
}

impl Engine {
    pub fn new(config: EngineConfig, templates: TemplateSet) -> Self {
        Self { config, templates: Arc::new(templates) }
    }

    pub fn with_bundled_templates(config: EngineConfig) -> Self {
        Self::new(config, TemplateSet::bundled())
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Full pipeline: Tier-1, routing, optional Tier-2, optional Tier-3.
    pub async fn run_case(&self, case: &MedicalCase, backend: &dyn ChatBackend) -> Result<CaseOutcome, CaseFailure> {
        let mut transcript = Transcript::new(case.case_id.clone());
        transcript.gold_answer = case.gold_answer;
        let span = info_span!("case", id = %case.case_id);
        let result = self.deliberate(case, backend, &mut transcript).instrument(span).await;
        match result {
            Ok(verdict) => {
                transcript.push(EventKind::Verdict(verdict.clone()));
                let ledger = UsageLedger::from_transcript(&transcript);
                Ok(CaseOutcome { verdict, transcript, ledger })
            }
            Err(error) => {
                transcript.failure = Some(error.to_string());
                Err(CaseFailure { error, transcript })
            }
        }
    }

    async fn deliberate(
        &self,
        case: &MedicalCase,
        backend: &dyn ChatBackend,
        transcript: &mut Transcript,
    ) -> Result<Verdict, ProtocolError> {
        case.validate()?;
        let (first, second) = self.tier1_diagnose(case, backend, transcript).await?;
        let after_tier1 = route_after_tier1(&first, &second);
        transcript.push(EventKind::Routing(after_tier1));
        debug!(?after_tier1, "tier-1 routed");

        match after_tier1.candidates {
            Some(candidates) => {
                let outcome = self.tier3_audit(case, candidates, &[first, second], backend, transcript).await?;
                Ok(outcome.verdict)
            }
            None => {
                let supervisor = self.tier2_review(case, (&first, &second), backend, transcript).await?;
                let after_tier2 = route_after_tier2(first.hypothesis, &supervisor);
                transcript.push(EventKind::Routing(after_tier2));
                debug!(?after_tier2, "tier-2 routed");
                match after_tier2.candidates {
                    None => Ok(Verdict {
                        answer: supervisor.hypothesis,
                        final_reasoning: supervisor.reasoning,
                        route_taken: Route::T1T2,
                        chose_outside_candidates: false,
                    }),
                    Some(candidates) => {
                        let prior = [first, second, supervisor];
                        let outcome = self.tier3_audit(case, candidates, &prior, backend, transcript).await?;
                        Ok(outcome.verdict)
                    }
                }
            }
        }
    }

    /// Two identically prompted experts diagnose independently.
    pub async fn tier1_diagnose(
        &self,
        case: &MedicalCase,
        backend: &dyn ChatBackend,
        transcript: &mut Transcript,
    ) -> Result<(AgentReport, AgentReport), ProtocolError> {
        let prompt = self.templates.render(Stage::Tier1, &self.config.prompt.case_bindings(case))?;
        let spec = |i| CallSpec { role: AgentRole::Tier1Expert(i), stage: Stage::Tier1, messages: vec![case_message(&prompt, case)] };
        let (r1, r2) = self
            .invoke_pair(backend, transcript, [spec(1), spec(2)], |_, parsed| diagnosis(case, parsed))
            .await;
        let (h1, raw1) = r1?;
        let (h2, raw2) = r2?;
        Ok((
            self.agent_report(AgentRole::Tier1Expert(1), Stage::Tier1, h1, raw1),
            self.agent_report(AgentRole::Tier1Expert(2), Stage::Tier1, h2, raw2),
        ))
    }

    /// Supervisor review of a Tier-1 consensus.
    pub async fn tier2_review(
        &self,
        case: &MedicalCase,
        consensus: (&AgentReport, &AgentReport),
        backend: &dyn ChatBackend,
        transcript: &mut Transcript,
    ) -> Result<AgentReport, ProtocolError> {
        if consensus.0.hypothesis != consensus.1.hypothesis {
            return Err(ProtocolError::Precondition(format!(
                "tier-2 review needs a consensus, got {} and {}",
                consensus.0.hypothesis, consensus.1.hypothesis
            )));
        }
        let bindings = self
            .config
            .prompt
            .case_bindings(case)
            .set("TIER 1 REPORT", format!("Expert 1: {}\n\nExpert 2: {}", consensus.0.raw_text, consensus.1.raw_text));
        let prompt = self.templates.render(Stage::Tier2, &bindings)?;
        let spec = CallSpec { role: AgentRole::Tier2Supervisor, stage: Stage::Tier2, messages: vec![case_message(&prompt, case)] };
        let mut log = Vec::new();
        let result = self.invoke(backend, spec, &mut log, |parsed| diagnosis(case, parsed)).await;
        transcript.append_calls(log);
        let ((hypothesis, reasoning), raw) = result?;
        Ok(self.agent_report(AgentRole::Tier2Supervisor, Stage::Tier2, (hypothesis, reasoning), raw))
    }

    /// Adversarial audit of two candidate hypotheses: one risk report per
    /// candidate, one inquiry round, then the leader's arbitration.
    pub async fn tier3_audit(
        &self,
        case: &MedicalCase,
        candidates: (OptionLetter, OptionLetter),
        prior_reports: &[AgentReport],
        backend: &dyn ChatBackend,
        transcript: &mut Transcript,
    ) -> Result<Tier3Outcome, ProtocolError> {
        if candidates.0 == candidates.1 {
            return Err(ProtocolError::Precondition(format!("tier-3 candidates must differ, got {} twice", candidates.0)));
        }
        let targets = [candidates.0, candidates.1];
        let case_bindings = self.config.prompt.case_bindings(case);
        let aggregated = aggregate_reports(prior_reports);

        // Step 1: risk mining, one critic per candidate.
        let mut critic_threads = Vec::with_capacity(2);
        for target in targets {
            let bindings = case_bindings.clone().set("OPTION", target.to_string()).set("AGGREGATED REPORT", aggregated.clone());
            let prompt = self.templates.render(Stage::Critic, &bindings)?;
            critic_threads.push(vec![case_message(&prompt, case)]);
        }
        let specs = [1u8, 2].map(|i| CallSpec {
            role: AgentRole::Critic(i),
            stage: Stage::Critic,
            messages: critic_threads[usize::from(i - 1)].clone(),
        });
        let (c1, c2) = self.invoke_pair(backend, transcript, specs, |_, parsed| risk(parsed)).await;
        let mut risk_reports = Vec::with_capacity(2);
        for (i, result) in [c1, c2].into_iter().enumerate() {
            let ((flaws, counter_evidence), raw) = result?;
            risk_reports.push(RiskReport {
                critic_index: i as u8 + 1,
                target_hypothesis: targets[i],
                flaws,
                counter_evidence,
                raw_text: raw,
            });
        }

        // Step 2: one leader call producing one question per critic.
        let risk_text = risk_reports
            .iter()
            .map(|r| format!("Expert {} who reviews {}: {}", r.critic_index, r.target_hypothesis, r.raw_text))
            .collect::<Vec<_>>()
            .join("\n\n");
        let bindings = case_bindings.clone().set("AGGREGATED REPORT", aggregated).set("RISK REPORT", risk_text);
        let inquiry_prompt = self.templates.render(Stage::LeaderInquiry, &bindings)?;
        let leader_thread = vec![case_message(&inquiry_prompt, case)];
        let spec = CallSpec { role: AgentRole::Leader, stage: Stage::LeaderInquiry, messages: leader_thread.clone() };
        let mut log = Vec::new();
        let result = self.invoke(backend, spec, &mut log, |parsed| inquiries_for(targets, parsed)).await;
        transcript.append_calls(log);
        let (inquiries, inquiry_raw) = result?;

        // Step 3: each critic answers its question in its own thread.
        let mut specs = Vec::with_capacity(2);
        for (i, inquiry) in inquiries.iter().enumerate() {
            let prompt = self
                .templates
                .render(Stage::CriticResponse, &Bindings::new().set("INQUIRY", inquiry.question.clone()))?;
            let mut messages = critic_threads[i].clone();
            messages.push(ChatMessage::assistant(risk_reports[i].raw_text.clone()));
            messages.push(ChatMessage::user(prompt));
            specs.push(CallSpec { role: AgentRole::Critic(i as u8 + 1), stage: Stage::CriticResponse, messages });
        }
        let specs: [CallSpec; 2] = specs.try_into().map_err(|_| ProtocolError::Precondition("expected two inquiries".into()))?;
        let (a1, a2) = self.invoke_pair(backend, transcript, specs, |_, parsed| response(parsed)).await;
        let mut responses = Vec::with_capacity(2);
        for (i, result) in [a1, a2].into_iter().enumerate() {
            let (text, _) = result?;
            responses.push(InquiryResponse { critic_index: i as u8 + 1, response: text });
        }

        // Step 4: arbitration, continuing the leader's thread.
        let response_text = responses
            .iter()
            .map(|r| format!("Expert {} who reviews {}: {}", r.critic_index, targets[usize::from(r.critic_index - 1)], r.response))
            .collect::<Vec<_>>()
            .join("\n");
        let verdict_prompt = self.templates.render(Stage::LeaderVerdict, &Bindings::new().set("RESPONSE", response_text))?;
        let mut messages = leader_thread;
        messages.push(ChatMessage::assistant(inquiry_raw));
        messages.push(ChatMessage::user(verdict_prompt));
        let spec = CallSpec { role: AgentRole::Leader, stage: Stage::LeaderVerdict, messages };
        let mut log = Vec::new();
        let result = self.invoke(backend, spec, &mut log, |parsed| final_verdict(case, parsed)).await;
        transcript.append_calls(log);
        let ((answer, final_reasoning), _) = result?;

        let route_taken = if prior_reports.iter().any(|r| r.role == AgentRole::Tier2Supervisor) {
            Route::T1T2T3
        } else {
            Route::T1T3
        };
        Ok(Tier3Outcome {
            verdict: Verdict {
                answer,
                final_reasoning,
                route_taken,
                chose_outside_candidates: answer != candidates.0 && answer != candidates.1,
            },
            risk_reports,
            inquiries,
            responses,
        })
    }

    fn agent_report(&self, role: AgentRole, stage: Stage, parsed: (OptionLetter, String), raw_text: String) -> AgentReport {
        AgentReport {
            role,
            hypothesis: parsed.0,
            reasoning: parsed.1,
            temperature: self.config.temperature(stage),
            raw_text,
        }
    }

    /// Two independent calls, concurrently when configured. Events land in
    /// the transcript in agent order regardless of completion order.
    async fn invoke_pair<T>(
        &self,
        backend: &dyn ChatBackend,
        transcript: &mut Transcript,
        specs: [CallSpec; 2],
        accept: impl Fn(usize, ParsedReport) -> Result<T, Rejection>,
    ) -> (Result<(T, String), ProtocolError>, Result<(T, String), ProtocolError>) {
        let [s1, s2] = specs;
        let (mut log1, mut log2) = (Vec::new(), Vec::new());
        let accept = &accept;
        let first = self.invoke(backend, s1, &mut log1, |p| accept(0, p));
        let second = self.invoke(backend, s2, &mut log2, |p| accept(1, p));
        let results = if self.config.concurrent_calls {
            tokio::join!(first, second)
        } else {
            let a = first.await;
            (a, second.await)
        };
        transcript.append_calls(log1);
        transcript.append_calls(log2);
        results
    }

    /// One agent output, regenerated with a corrective instruction until it
    /// parses or the retry budget runs out.
    async fn invoke<T>(
        &self,
        backend: &dyn ChatBackend,
        spec: CallSpec,
        log: &mut Vec<EventKind>,
        accept: impl Fn(ParsedReport) -> Result<T, Rejection>,
    ) -> Result<(T, String), ProtocolError> {
        let temperature = self.config.temperature(spec.stage);
        let mut rejected: Option<(String, Rejection)> = None;
        for attempt in 0..=self.config.max_parse_retries {
            let mut messages = spec.messages.clone();
            if let Some((bad_output, _)) = &rejected {
                messages.push(ChatMessage::assistant(bad_output.clone()));
                messages.push(ChatMessage::user(corrective_instruction(spec.stage)));
            }
            let call_id = format!("{}.{}.{:02}", spec.stage.ordinal(), spec.role.label(), attempt);
            let request = ChatRequest {
                model_id: self.config.model_id.clone(),
                messages,
                temperature,
                max_output_tokens: self.config.max_output_tokens,
                tag: Some(CallTag { agent: spec.role.label(), call_id: call_id.clone() }),
            };
            let started = Instant::now();
            let response = backend.complete(&request).await.map_err(|e| match e {
                BackendError::Unavailable { .. } => ProtocolError::BackendUnavailable(e),
                other => ProtocolError::Backend(other),
            })?;
            log.push(EventKind::ModelCall(ModelCall {
                role: spec.role,
                stage: spec.stage,
                attempt,
                call_id,
                temperature,
                request: request.digest(),
                response: response.text.clone(),
                usage: response.usage,
                wall_time_ms: started.elapsed().as_millis() as u64,
            }));
            let parsed = parse_report(&response.text, spec.stage).map_err(Rejection::Grammar);
            let fields = parsed.as_ref().ok().cloned();
            let outcome = parsed.and_then(&accept);
            let result = match (&outcome, fields) {
                (Ok(_), Some(fields)) => ParseResult::Success { fields },
                (Err(rejection), _) => ParseResult::Failure { error: rejection.to_string() },
                (Ok(_), None) => unreachable!("accepted output always parsed"),
            };
            log.push(EventKind::ParseOutcome(ParseOutcome { role: spec.role, stage: spec.stage, call_seq: 0, result }));
            match outcome {
                Ok(value) => return Ok((value, response.text)),
                Err(rejection) => {
                    debug!(role = %spec.role, attempt, %rejection, "output rejected");
                    rejected = Some((response.text, rejection));
                }
            }
        }
        let attempts = self.config.max_parse_retries + 1;
        let (_, last) = rejected.expect("loop runs at least once");
        if spec.stage == Stage::LeaderInquiry && last.is_inquiry_mismatch() {
            Err(ProtocolError::InquiryMismatch { attempts, last_error: last.to_string() })
        } else {
            Err(ProtocolError::ParseExhausted { role: spec.role, stage: spec.stage, attempts, last_error: last.to_string() })
        }
    }
}

/// Runs one case with the bundled templates.
pub async fn run_case(case: &MedicalCase, config: &EngineConfig, backend: &dyn ChatBackend) -> Result<CaseOutcome, CaseFailure> {
    Engine::with_bundled_templates(config.clone()).run_case(case, backend).await
}

fn case_message(text: &str, case: &MedicalCase) -> ChatMessage {
    let message = ChatMessage::user(text);
    match &case.image {
        Some(image) => message.with_image(image.media_type.clone(), image.bytes.clone()),
        None => message,
    }
}

/// Every report produced before Tier-3, in generation order.
fn aggregate_reports(reports: &[AgentReport]) -> String {
    reports
        .iter()
        .map(|r| format!("{}: {}", r.role.display_name(), r.raw_text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn diagnosis(case: &MedicalCase, parsed: ParsedReport) -> Result<(OptionLetter, String), Rejection> {
    match parsed {
        ParsedReport::Diagnosis { reasoning, answer } if case.has_option(answer) => Ok((answer, reasoning)),
        ParsedReport::Diagnosis { answer, .. } => Err(Rejection::NotAnOption(answer)),
        _ => Err(Rejection::Grammar(ParseError::MarkerMissing("#Answer"))),
    }
}

fn final_verdict(case: &MedicalCase, parsed: ParsedReport) -> Result<(OptionLetter, String), Rejection> {
    match parsed {
        ParsedReport::Verdict { final_reasoning, final_answer } if case.has_option(final_answer) => {
            Ok((final_answer, final_reasoning))
        }
        ParsedReport::Verdict { final_answer, .. } => Err(Rejection::NotAnOption(final_answer)),
        _ => Err(Rejection::Grammar(ParseError::MarkerMissing("#Final Answer"))),
    }
}

fn risk(parsed: ParsedReport) -> Result<(String, String), Rejection> {
    match parsed {
        ParsedReport::Risk { flaws, counter_evidence } => Ok((flaws, counter_evidence)),
        _ => Err(Rejection::Grammar(ParseError::MarkerMissing("#Flaws"))),
    }
}

fn response(parsed: ParsedReport) -> Result<String, Rejection> {
    match parsed {
        ParsedReport::Response { text } => Ok(text),
        _ => Err(Rejection::Grammar(ParseError::EmptyField("response"))),
    }
}

fn inquiries_for(targets: [OptionLetter; 2], parsed: ParsedReport) -> Result<Vec<Inquiry>, Rejection> {
    let ParsedReport::Inquiries { inquiries } = parsed else {
        return Err(Rejection::Grammar(ParseError::WrongArity(0)));
    };
    for q in &inquiries {
        let expected = targets[usize::from(q.addressed_to - 1)];
        if q.reviewed_option != expected {
            return Err(Rejection::InquiryTarget { expert: q.addressed_to, expected, found: q.reviewed_option });
        }
    }
    Ok(inquiries)
}
