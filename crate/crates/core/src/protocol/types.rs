use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ProtocolError;

/// A single answer option letter, `A` through `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct OptionLetter(u8);

impl OptionLetter {
    pub fn new(c: char) -> Option<Self> {
        let upper = c.to_ascii_uppercase();
        upper.is_ascii_uppercase().then_some(Self(upper as u8))
    }

    /// Letter at zero-based position `index` (0 → `A`).
    pub fn from_index(index: usize) -> Option<Self> {
        (index < 26).then(|| Self(b'A' + index as u8))
    }

    pub fn index(self) -> usize {
        (self.0 - b'A') as usize
    }

    pub fn as_char(self) -> char {
        self.0 as char
    }
}

impl fmt::Display for OptionLetter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl From<OptionLetter> for String {
    fn from(l: OptionLetter) -> Self {
        l.to_string()
    }
}

impl TryFrom<String> for OptionLetter {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for OptionLetter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::new(c).ok_or_else(|| format!("not a letter: {s:?}")),
            _ => Err(format!("expected a single letter, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseImage {
    pub media_type: String,
    pub bytes: Arc<[u8]>,
}

impl CaseImage {
    pub fn new(media_type: impl Into<String>, bytes: impl Into<Arc<[u8]>>) -> Self {
        Self { media_type: media_type.into(), bytes: bytes.into() }
    }
}

/// One VQA instance. Text-only cases simply carry no image.
#[derive(Debug, Clone, PartialEq)]
pub struct MedicalCase {
    pub case_id: String,
    pub image: Option<CaseImage>,
    pub question: String,
    pub options: Vec<(OptionLetter, String)>,
    pub gold_answer: Option<OptionLetter>,
    /// Medical specialty used for the `{MEDICAL FIELD}` placeholder.
    pub field_hint: Option<String>,
}

impl MedicalCase {
    /// Builds a case, lettering `options` A, B, C, … in order.
    pub fn new<S: Into<String>>(
        case_id: impl Into<String>,
        question: impl Into<String>,
        options: impl IntoIterator<Item = S>,
    ) -> Self {
        let options = options
            .into_iter()
            .enumerate()
            .map(|(i, text)| (OptionLetter::from_index(i).unwrap_or(OptionLetter(b'Z')), text.into()))
            .collect();
        Self {
            case_id: case_id.into(),
            image: None,
            question: question.into(),
            options,
            gold_answer: None,
            field_hint: None,
        }
    }

    pub fn with_gold(mut self, gold: OptionLetter) -> Self {
        self.gold_answer = Some(gold);
        self
    }

    pub fn with_image(mut self, image: CaseImage) -> Self {
        self.image = Some(image);
        self
    }

    pub fn with_field_hint(mut self, field: impl Into<String>) -> Self {
        self.field_hint = Some(field.into());
        self
    }

    pub fn has_option(&self, letter: OptionLetter) -> bool {
        self.options.iter().any(|(l, _)| *l == letter)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let invalid = |reason: String| Err(ProtocolError::InvalidCase(reason));
        if self.options.len() < 2 || self.options.len() > 26 {
            return invalid(format!("expected 2-26 options, got {}", self.options.len()));
        }
        for (i, (letter, _)) in self.options.iter().enumerate() {
            if letter.index() != i {
                return invalid(format!("option {} is lettered {letter}; letters must run A, B, C, …", i + 1));
            }
        }
        if let Some(gold) = self.gold_answer {
            if !self.has_option(gold) {
                return invalid(format!("gold answer {gold} is not one of the options"));
            }
        }
        if self.question.trim().is_empty() {
            return invalid("question is empty".into());
        }
        Ok(())
    }
}

/// The agent that produced a model call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum AgentRole {
    Tier1Expert(u8),
    Tier2Supervisor,
    Critic(u8),
    Leader,
}

impl AgentRole {
    pub fn label(self) -> String {
        match self {
            Self::Tier1Expert(i) => format!("tier1_expert_{i}"),
            Self::Tier2Supervisor => "tier2_supervisor".into(),
            Self::Critic(i) => format!("critic_{i}"),
            Self::Leader => "leader".into(),
        }
    }

    pub fn display_name(self) -> String {
        match self {
            Self::Tier1Expert(i) => format!("Tier-1 Expert {i}"),
            Self::Tier2Supervisor => "Tier-2 Supervisor".into(),
            Self::Critic(i) => format!("Critic {i}"),
            Self::Leader => "Leader".into(),
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl From<AgentRole> for String {
    fn from(r: AgentRole) -> Self {
        r.label()
    }
}

impl TryFrom<String> for AgentRole {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for AgentRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let indexed = |prefix: &str| -> Option<u8> {
            s.strip_prefix(prefix)
                .and_then(|n| n.parse::<u8>().ok())
                .filter(|n| matches!(n, 1 | 2))
        };
        match s {
            "tier2_supervisor" => Ok(Self::Tier2Supervisor),
            "leader" => Ok(Self::Leader),
            _ => indexed("tier1_expert_")
                .map(Self::Tier1Expert)
                .or_else(|| indexed("critic_").map(Self::Critic))
                .ok_or_else(|| format!("unknown agent role {s:?}")),
        }
    }
}

/// A diagnosing agent's output: Tier-1 experts and the Tier-2 supervisor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub role: AgentRole,
    pub hypothesis: OptionLetter,
    pub reasoning: String,
    pub temperature: f64,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskReport {
    pub critic_index: u8,
    pub target_hypothesis: OptionLetter,
    pub flaws: String,
    pub counter_evidence: String,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inquiry {
    pub addressed_to: u8,
    pub reviewed_option: OptionLetter,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InquiryResponse {
    pub critic_index: u8,
    pub response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteStage {
    AfterTier1,
    AfterTier2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Destination {
    Tier2,
    Tier3,
    Terminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub stage: RouteStage,
    pub destination: Destination,
    /// Whether the hypotheses compared at this stage disagree.
    pub divergence: bool,
    pub candidates: Option<(OptionLetter, OptionLetter)>,
}

/// The tier path a case actually took.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Route {
    #[serde(rename = "T1_T2")]
    T1T2,
    #[serde(rename = "T1_T3")]
    T1T3,
    #[serde(rename = "T1_T2_T3")]
    T1T2T3,
}

impl Route {
    pub const ALL: [Route; 3] = [Route::T1T2, Route::T1T3, Route::T1T2T3];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::T1T2 => "T1_T2",
            Self::T1T3 => "T1_T3",
            Self::T1T2T3 => "T1_T2_T3",
        }
    }

    /// Model calls the route consumes when no output needs a parse retry.
    pub fn model_calls(self) -> usize {
        match self {
            Self::T1T2 => 3,
            Self::T1T3 => 8,
            Self::T1T2T3 => 9,
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub answer: OptionLetter,
    pub final_reasoning: String,
    pub route_taken: Route,
    pub chose_outside_candidates: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn letter(c: char) -> OptionLetter {
        OptionLetter::new(c).unwrap()
    }

    #[test]
    fn letters_normalize_case() {
        assert_eq!(letter('b'), letter('B'));
        assert_eq!(letter('B').index(), 1);
        assert!(OptionLetter::new('1').is_none());
        assert!("AB".parse::<OptionLetter>().is_err());
        assert_eq!(" c ".parse::<OptionLetter>().unwrap(), letter('C'));
    }

    #[test]
    fn case_validation() {
        let case = MedicalCase::new("c1", "Which?", ["x", "y", "z"]).with_gold(letter('C'));
        assert!(case.validate().is_ok());

        let bad_gold = MedicalCase::new("c1", "Which?", ["x", "y"]).with_gold(letter('E'));
        assert!(matches!(bad_gold.validate(), Err(ProtocolError::InvalidCase(_))));

        let one_option = MedicalCase::new("c1", "Which?", ["x"]);
        assert!(one_option.validate().is_err());

        let mut gap = MedicalCase::new("c1", "Which?", ["x", "y"]);
        gap.options[1].0 = letter('C');
        assert!(gap.validate().is_err());
    }

    #[test]
    fn role_labels_round_trip() {
        for role in [
            AgentRole::Tier1Expert(1),
            AgentRole::Tier1Expert(2),
            AgentRole::Tier2Supervisor,
            AgentRole::Critic(1),
            AgentRole::Critic(2),
            AgentRole::Leader,
        ] {
            assert_eq!(role.label().parse::<AgentRole>().unwrap(), role);
        }
        assert!("critic_3".parse::<AgentRole>().is_err());
    }

    #[test]
    fn route_serializes_with_underscores() {
        assert_eq!(serde_json::to_string(&Route::T1T2T3).unwrap(), "\"T1_T2_T3\"");
    }
}
