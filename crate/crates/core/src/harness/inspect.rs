use std::fmt::Write as _;

use crate::protocol::{Destination, EventKind, ParseResult, RouteStage, Transcript};

fn excerpt(text: &str, limit: usize) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= limit {
        flat
    } else {
        format!("{}…", flat.chars().take(limit).collect::<String>())
    }
}

/// Human-readable trace of one transcript, one event per line.
pub fn render_trace(transcript: &Transcript) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "case {}", transcript.case_id);
    if let Some(gold) = transcript.gold_answer {
        let _ = writeln!(out, "gold {gold}");
    }
    for event in &transcript.events {
        let line = match &event.kind {
            EventKind::ModelCall(c) => format!(
                "{} [{}] attempt {} t={} tokens {}/{}{}: {}",
                c.role.display_name(),
                c.stage.as_str(),
                c.attempt,
                c.temperature,
                c.usage.input_tokens,
                c.usage.output_tokens,
                if c.usage.estimated { " (est.)" } else { "" },
                excerpt(&c.response, 100)
            ),
            EventKind::ParseOutcome(p) => match &p.result {
                ParseResult::Success { fields } => match fields.hypothesis() {
                    Some(h) => format!("  parsed, answer {h}"),
                    None => "  parsed".to_string(),
                },
                ParseResult::Failure { error } => format!("  parse failed: {error}"),
            },
            EventKind::Routing(r) => {
                let stage = match r.stage {
                    RouteStage::AfterTier1 => "after Tier-1",
                    RouteStage::AfterTier2 => "after Tier-2",
                };
                let dest = match r.destination {
                    Destination::Tier2 => "Tier-2".to_string(),
                    Destination::Tier3 => match r.candidates {
                        Some((a, b)) => format!("Tier-3 with candidates {a} and {b}"),
                        None => "Tier-3".to_string(),
                    },
                    Destination::Terminate => "terminate".to_string(),
                };
                format!("route {stage}: divergence={} -> {dest}", r.divergence)
            }
            EventKind::Verdict(v) => format!(
                "verdict {} via {}{}: {}",
                v.answer,
                v.route_taken,
                if v.chose_outside_candidates { " (outside candidates)" } else { "" },
                excerpt(&v.final_reasoning, 100)
            ),
        };
        let _ = writeln!(out, "{:>3} {line}", event.seq);
    }
    if let Some(f) = &transcript.failure {
        let _ = writeln!(out, "failed: {f}");
    }
    out
}
