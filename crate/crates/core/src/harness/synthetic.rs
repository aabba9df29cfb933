//! Scripted agent behaviour for protocol tests and synthetic benchmarks.

use crate::backend::ScriptedBackend;
use crate::prompts::{ParsedReport, Stage};
use crate::protocol::{AgentRole, Inquiry, OptionLetter};

/// What each scripted agent answers for one case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptPlan {
    pub tier1: (OptionLetter, OptionLetter),
    /// Supervisor answer; used only when Tier-1 agrees.
    pub supervisor: OptionLetter,
    /// Leader verdict; used only when the case reaches Tier-3.
    pub leader: OptionLetter,
    /// Synthetic (input, output) tokens per call; estimated when `None`.
    pub usage: Option<(u64, u64)>,
}

impl ScriptPlan {
    /// Every agent answers `letter`.
    pub fn unanimous(letter: OptionLetter) -> Self {
        Self { tier1: (letter, letter), supervisor: letter, leader: letter, usage: None }
    }

    /// Tier-3 candidates this plan leads to, if the case escalates.
    pub fn candidates(&self) -> Option<(OptionLetter, OptionLetter)> {
        let (a, b) = self.tier1;
        if a != b {
            Some((a, b))
        } else if self.supervisor != a {
            Some((a, self.supervisor))
        } else {
            None
        }
    }

    /// Final answer the protocol must reach under this plan.
    pub fn expected_answer(&self) -> OptionLetter {
        if self.candidates().is_some() {
            self.leader
        } else {
            self.supervisor
        }
    }

    pub fn backend(&self) -> ScriptedBackend {
        let diagnosis = |letter: OptionLetter, who: &str| ParsedReport::Diagnosis {
            reasoning: format!("{who} sees findings most consistent with option {letter}."),
            answer: letter,
        };
        let mut backend = ScriptedBackend::new(Vec::new())
            .respond_always(
                AgentRole::Tier1Expert(1).label(),
                diagnosis(self.tier1.0, "Expert 1").to_canonical(Stage::Tier1),
            )
            .respond_always(
                AgentRole::Tier1Expert(2).label(),
                diagnosis(self.tier1.1, "Expert 2").to_canonical(Stage::Tier1),
            )
            .respond_always(
                AgentRole::Tier2Supervisor.label(),
                diagnosis(self.supervisor, "The supervisor").to_canonical(Stage::Tier2),
            );
        if let Some((a, b)) = self.candidates() {
            for (i, target) in [(1u8, a), (2u8, b)] {
                let risk = ParsedReport::Risk {
                    flaws: format!("Option {target} overlooks an alternative explanation."),
                    counter_evidence: format!("The image shows a feature atypical for {target}."),
                };
                backend = backend
                    .respond_at(AgentRole::Critic(i).label(), 1, risk.to_canonical(Stage::Critic))
                    .respond_at(
                        AgentRole::Critic(i).label(),
                        2,
                        format!("The atypical feature remains the main risk for option {target}."),
                    );
            }
            let inquiries = ParsedReport::Inquiries {
                inquiries: vec![
                    Inquiry { addressed_to: 1, reviewed_option: a, question: format!("How strong is the risk you found in {a}?") },
                    Inquiry { addressed_to: 2, reviewed_option: b, question: format!("How strong is the risk you found in {b}?") },
                ],
            };
            let verdict = ParsedReport::Verdict {
                final_reasoning: format!("Option {} best survived its critique.", self.leader),
                final_answer: self.leader,
            };
            backend = backend
                .respond_at(AgentRole::Leader.label(), 1, inquiries.to_canonical(Stage::LeaderInquiry))
                .respond_at(AgentRole::Leader.label(), 2, verdict.to_canonical(Stage::LeaderVerdict));
        }
        match self.usage {
            Some((i, o)) => backend.with_uniform_usage(i, o),
            None => backend,
        }
    }
}
