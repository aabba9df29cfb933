use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{AgentRole, Destination, OptionLetter, Route, RouteDecision, Verdict};
use crate::backend::{RequestDigest, Usage};
use crate::prompts::{ParsedReport, Stage};

pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCall {
    pub role: AgentRole,
    pub stage: Stage,
    /// 0 for the first generation, n for the n-th parse retry.
    pub attempt: u32,
    pub call_id: String,
    pub temperature: f64,
    pub request: RequestDigest,
    pub response: String,
    pub usage: Usage,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ParseResult {
    Success { fields: ParsedReport },
    Failure { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub role: AgentRole,
    pub stage: Stage,
    /// Sequence number of the model call this outcome belongs to.
    pub call_seq: u64,
    pub result: ParseResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    ModelCall(ModelCall),
    ParseOutcome(ParseOutcome),
    Routing(RouteDecision),
    Verdict(Verdict),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Ordered audit log of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub schema_version: u32,
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<OptionLetter>,
    /// Free-form metadata attached by the caller (dataset subset, trial, …).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
    pub events: Vec<Event>,
    /// Set when the case ended in an error instead of a verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl Transcript {
    pub fn new(case_id: impl Into<String>) -> Self {
        Self {
            schema_version: TRANSCRIPT_SCHEMA_VERSION,
            case_id: case_id.into(),
            gold_answer: None,
            labels: BTreeMap::new(),
            events: Vec::new(),
            failure: None,
        }
    }

    fn next_seq(&self) -> u64 {
        self.events.last().map_or(1, |e| e.seq + 1)
    }

    pub fn push(&mut self, kind: EventKind) -> u64 {
        let seq = self.next_seq();
        self.events.push(Event { seq, kind });
        seq
    }

    /// Appends buffered call events, numbering them and linking each parse
    /// outcome to the model call before it.
    pub fn append_calls(&mut self, buffered: Vec<EventKind>) {
        let mut last_call = 0;
        for mut kind in buffered {
            if let EventKind::ParseOutcome(outcome) = &mut kind {
                outcome.call_seq = last_call;
            }
            let seq = self.push(kind);
            if matches!(self.events.last().map(|e| &e.kind), Some(EventKind::ModelCall(_))) {
                last_call = seq;
            }
        }
    }

    pub fn model_calls(&self) -> impl Iterator<Item = &ModelCall> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::ModelCall(c) => Some(c),
            _ => None,
        })
    }

    pub fn parse_outcomes(&self) -> impl Iterator<Item = &ParseOutcome> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::ParseOutcome(p) => Some(p),
            _ => None,
        })
    }

    pub fn routings(&self) -> impl Iterator<Item = &RouteDecision> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Routing(r) => Some(r),
            _ => None,
        })
    }

    /// Successfully parsed outputs, in order.
    pub fn accepted(&self) -> impl Iterator<Item = (AgentRole, Stage, &ParsedReport)> {
        self.parse_outcomes().filter_map(|p| match &p.result {
            ParseResult::Success { fields } => Some((p.role, p.stage, fields)),
            ParseResult::Failure { .. } => None,
        })
    }

    pub fn verdict(&self) -> Option<&Verdict> {
        self.events.iter().rev().find_map(|e| match &e.kind {
            EventKind::Verdict(v) => Some(v),
            _ => None,
        })
    }

    pub fn route(&self) -> Option<Route> {
        self.verdict().map(|v| v.route_taken)
    }

    /// Model calls excluding parse-retry regenerations.
    pub fn first_attempt_calls(&self) -> usize {
        self.model_calls().filter(|c| c.attempt == 0).count()
    }

    /// Hypothesis letters proposed during deliberation: Tier-1, Tier-2 and
    /// the leader's verdict. Critics audit and propose nothing.
    pub fn hypotheses(&self) -> Vec<OptionLetter> {
        self.accepted().filter_map(|(_, _, fields)| fields.hypothesis()).collect()
    }

    /// Copy with all wall-clock fields zeroed, for byte comparisons.
    pub fn without_timing(&self) -> Self {
        let mut t = self.clone();
        for e in &mut t.events {
            if let EventKind::ModelCall(c) = &mut e.kind {
                c.wall_time_ms = 0;
            }
        }
        t
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Checks the structural protocol invariants and returns every violation.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != TRANSCRIPT_SCHEMA_VERSION {
            out.push(format!("schema_version {} unsupported", self.schema_version));
        }
        for pair in self.events.windows(2) {
            if pair[1].seq <= pair[0].seq {
                out.push(format!("sequence not increasing at {}", pair[1].seq));
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if let EventKind::ModelCall(call) = &e.kind {
                match self.events.get(i + 1).map(|n| &n.kind) {
                    Some(EventKind::ParseOutcome(p))
                        if p.call_seq == e.seq && p.role == call.role && p.stage == call.stage => {}
                    _ => out.push(format!("model call {} is not followed by its parse outcome", e.seq)),
                }
            }
            if let EventKind::ParseOutcome(p) = &e.kind {
                let prev_is_call = i > 0 && matches!(&self.events[i - 1].kind, EventKind::ModelCall(_) if self.events[i - 1].seq == p.call_seq);
                if !prev_is_call {
                    out.push(format!("parse outcome {} does not follow its model call", e.seq));
                }
            }
        }

        let verdicts: Vec<usize> = self
            .events
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e.kind, EventKind::Verdict(_)))
            .map(|(i, _)| i)
            .collect();
        match (&self.failure, verdicts.as_slice()) {
            (None, [i]) if *i + 1 == self.events.len() => {}
            (None, _) => out.push(format!("expected exactly one final verdict, found {}", verdicts.len())),
            (Some(_), []) => {}
            (Some(_), _) => out.push("failed transcript carries a verdict".into()),
        }

        let mut stances: BTreeMap<AgentRole, BTreeSet<OptionLetter>> = BTreeMap::new();
        for (role, _, fields) in self.accepted() {
            if let Some(h) = fields.hypothesis() {
                stances.entry(role).or_default().insert(h);
            }
        }
        for (role, letters) in stances {
            if letters.len() > 1 {
                out.push(format!("{role} changed stance: {letters:?}"));
            }
        }

        let inquiry_rounds = self.accepted().filter(|(_, s, _)| *s == Stage::LeaderInquiry).count();
        if inquiry_rounds > 1 {
            out.push(format!("{inquiry_rounds} inquiry rounds; at most one allowed"));
        }
        if inquiry_rounds > 0 && !self.routings().any(|r| r.destination == Destination::Tier3) {
            out.push("inquiry issued outside Tier-3".into());
        }
        for critic in [1u8, 2] {
            let targeted = self
                .accepted()
                .filter_map(|(_, s, f)| match (s, f) {
                    (Stage::LeaderInquiry, ParsedReport::Inquiries { inquiries }) => {
                        Some(inquiries.iter().filter(|q| q.addressed_to == critic).count())
                    }
                    _ => None,
                })
                .sum::<usize>();
            if targeted > 1 {
                out.push(format!("critic {critic} inquired {targeted} times"));
            }
        }

        if let Some(route) = self.route() {
            let calls = self.first_attempt_calls();
            if calls != route.model_calls() {
                out.push(format!("route {route} made {calls} first-attempt calls, expected {}", route.model_calls()));
            }
        }
        out
    }
}
