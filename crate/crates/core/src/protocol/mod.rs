//! The three-tier deliberation protocol: independent diagnosis, supervisory
//! review of consensus, and adversarial audit with a single inquiry round.

mod engine;
mod routing;
mod transcript;
mod types;

use thiserror::Error;

pub use engine::{run_case, CaseFailure, CaseOutcome, Engine, EngineConfig, Tier3Outcome};
pub use routing::{route_after_tier1, route_after_tier2, route_letters_after_tier1, route_letters_after_tier2};
pub use transcript::{Event, EventKind, ModelCall, ParseOutcome, ParseResult, Transcript, TRANSCRIPT_SCHEMA_VERSION};
pub use types::{
    AgentReport, AgentRole, CaseImage, Destination, Inquiry, InquiryResponse, MedicalCase, OptionLetter, RiskReport,
    Route, RouteDecision, RouteStage, Verdict,
};

use crate::backend::BackendError;
use crate::prompts::{PromptError, Stage};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    BackendUnavailable(BackendError),
    #[error("backend error: {0}")]
    Backend(BackendError),
    #[error("{role} never produced valid {} output in {attempts} attempt(s): {last_error}", stage.as_str())]
    ParseExhausted { role: AgentRole, stage: Stage, attempts: u32, last_error: String },
    #[error("leader inquiry did not address both critics in {attempts} attempt(s): {last_error}")]
    InquiryMismatch { attempts: u32, last_error: String },
    #[error("prompt rendering failed: {0}")]
    Prompt(#[from] PromptError),
}
