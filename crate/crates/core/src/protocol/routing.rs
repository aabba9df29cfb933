//! Routing rules between tiers. Both functions look only at hypothesis letters.

use super::types::{AgentReport, Destination, OptionLetter, RouteDecision, RouteStage};

/// Tier-1 divergence routing: agreement goes to supervisory review,
/// disagreement goes straight to the adversarial audit with the two
/// hypotheses as candidates, in agent order.
pub fn route_after_tier1(first: &AgentReport, second: &AgentReport) -> RouteDecision {
    route_letters_after_tier1(first.hypothesis, second.hypothesis)
}

pub fn route_letters_after_tier1(first: OptionLetter, second: OptionLetter) -> RouteDecision {
    let divergence = first != second;
    RouteDecision {
        stage: RouteStage::AfterTier1,
        destination: if divergence { Destination::Tier3 } else { Destination::Tier2 },
        divergence,
        candidates: divergence.then_some((first, second)),
    }
}

/// Tier-2 routing: the case terminates only if the supervisor reaffirms the
/// Tier-1 consensus. Candidates are (consensus, supervisor alternative).
pub fn route_after_tier2(consensus: OptionLetter, supervisor: &AgentReport) -> RouteDecision {
    route_letters_after_tier2(consensus, supervisor.hypothesis)
}

pub fn route_letters_after_tier2(consensus: OptionLetter, supervisor: OptionLetter) -> RouteDecision {
    let divergence = consensus != supervisor;
    RouteDecision {
        stage: RouteStage::AfterTier2,
        destination: if divergence { Destination::Tier3 } else { Destination::Terminate },
        divergence,
        candidates: divergence.then_some((consensus, supervisor)),
    }
}
