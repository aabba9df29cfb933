//! Prompt templates and output grammars for each deliberation stage.

mod parse;
mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{normalize_answer, parse_inquiries, parse_report, ParseError, ParsedReport};
pub use template::{bundled_judge_evidence, bundled_judge_noise, Bindings, PromptTemplate, TemplateSet};

use crate::protocol::MedicalCase;

/// Version of [`CORRECTIVE_INSTRUCTION`]; bump when its text changes.
pub const CORRECTIVE_INSTRUCTION_VERSION: u32 = 1;
pub const CORRECTIVE_INSTRUCTION: &str = "Your previous output violated the required format. Output strictly: ";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("no binding for placeholder {{{0}}}")]
    MissingBinding(String),
    #[error("cannot read template: {0}")]
    Io(String),
}

/// One kind of model call in the protocol, each with its own template and
/// output grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tier1,
    Tier2,
    Critic,
    LeaderInquiry,
    CriticResponse,
    LeaderVerdict,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Tier1,
        Stage::Tier2,
        Stage::Critic,
        Stage::LeaderInquiry,
        Stage::CriticResponse,
        Stage::LeaderVerdict,
    ];

    pub fn template_file(self) -> &'static str {
        match self {
            Self::Tier1 => "tier1.txt",
            Self::Tier2 => "tier2.txt",
            Self::Critic => "critic.txt",
            Self::LeaderInquiry => "leader_inquiry.txt",
            Self::CriticResponse => "critic_response.txt",
            Self::LeaderVerdict => "leader_verdict.txt",
        }
    }

    /// Position in protocol order, 1-based.
    pub fn ordinal(self) -> u8 {
        match self {
            Self::Tier1 => 1,
            Self::Tier2 => 2,
            Self::Critic => 3,
            Self::LeaderInquiry => 4,
            Self::CriticResponse => 5,
            Self::LeaderVerdict => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Tier1 => "tier1",
            Self::Tier2 => "tier2",
            Self::Critic => "critic",
            Self::LeaderInquiry => "leader_inquiry",
            Self::CriticResponse => "critic_response",
            Self::LeaderVerdict => "leader_verdict",
        }
    }

    /// The output format the stage's template demands, restated on retry.
    pub fn format_instruction(self) -> &'static str {
        match self {
            Self::Tier1 => "#Reasoning: <3-5 sentences of reasoning> #Answer: <a single letter of your choice, e.g. A or B.>",
            Self::Tier2 => "#Review Reasoning: <a rigorous 3-5 sentence paragraph> #Answer: <a single letter of your choice, e.g. A or B>",
            Self::Critic => "#Flaws: <the specific logical flaw, risk, or overlooked possibility in 3-5 concise sentences> Counter Evidence: <specific evidence from the original case supporting your critique in 4 sentences>",
            Self::LeaderInquiry => "Inquiries:@ To Expert 1 who reviews <option>: <single pointed question> @ To Expert 2 who reviews <option>: <single pointed question>",
            Self::CriticResponse => "<your answer to the leader's question in 1-3 sentences>",
            Self::LeaderVerdict => "#Final Reasoning: <6-8 sentences comparing the critiques> #Final Answer: <Only the single letter of your choice, e.g., A or B>",
        }
    }
}

/// Text appended as a new user message when an output fails its grammar.
pub fn corrective_instruction(stage: Stage) -> String {
    format!("{CORRECTIVE_INSTRUCTION}{}", stage.format_instruction())
}

/// `{MEDICAL CASE}` text: the question, then one `X. text` line per option.
pub fn format_medical_case(case: &MedicalCase) -> String {
    let mut out = case.question.trim().to_string();
    for (letter, text) in &case.options {
        out.push('\n');
        out.push_str(&format!("{letter}. {}", text.trim()));
    }
    out
}

/// Values for the specialty placeholders shared by several templates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptContext {
    pub medical_field: String,
    pub imaging_modalities: String,
    pub imaging_type: String,
}

impl Default for PromptContext {
    fn default() -> Self {
        Self {
            medical_field: "medical".into(),
            imaging_modalities: "medical imaging".into(),
            imaging_type: "medical".into(),
        }
    }
}

impl PromptContext {
    /// Bindings for the specialty placeholders plus `{MEDICAL CASE}`.
    pub fn case_bindings(&self, case: &MedicalCase) -> Bindings {
        Bindings::new()
            .set("MEDICAL FIELD", case.field_hint.clone().unwrap_or_else(|| self.medical_field.clone()))
            .set("IMAGING MODALITIES", self.imaging_modalities.clone())
            .set("IMAGING TYPE", self.imaging_type.clone())
            .set("MEDICAL CASE", format_medical_case(case))
    }
}
