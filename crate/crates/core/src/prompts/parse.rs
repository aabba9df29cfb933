use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Stage;
use crate::protocol::{Inquiry, OptionLetter};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("marker {0} not found")]
    MarkerMissing(&'static str),
    #[error("answer {0:?} is not a single letter")]
    AnswerNotALetter(String),
    #[error("{0} is empty")]
    EmptyField(&'static str),
    #[error("expected inquiries for exactly 2 experts, found {0}")]
    WrongArity(usize),
    #[error("expert {0} is inquired more than once")]
    DuplicateExpert(u8),
    #[error("inquiry addresses unknown expert {0}")]
    UnknownExpert(u32),
    #[error("unparsable inquiry header: {0:?}")]
    UnparsableHeader(String),
}

/// Fields extracted from one agent output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "grammar", rename_all = "snake_case")]
pub enum ParsedReport {
    Diagnosis { reasoning: String, answer: OptionLetter },
    Risk { flaws: String, counter_evidence: String },
    Inquiries { inquiries: Vec<Inquiry> },
    Response { text: String },
    Verdict { final_reasoning: String, final_answer: OptionLetter },
}

impl ParsedReport {
    /// The hypothesis letter asserted by this output, if any.
    pub fn hypothesis(&self) -> Option<OptionLetter> {
        match self {
            Self::Diagnosis { answer, .. } => Some(*answer),
            Self::Verdict { final_answer, .. } => Some(*final_answer),
            _ => None,
        }
    }

    /// Renders the report in the canonical marker form of `stage`.
    pub fn to_canonical(&self, stage: Stage) -> String {
        match self {
            Self::Diagnosis { reasoning, answer } => match stage {
                Stage::Tier2 => format!("#Review Reasoning: {reasoning} #Answer: {answer}"),
                _ => format!("#Reasoning: {reasoning} #Answer: {answer}"),
            },
            Self::Risk { flaws, counter_evidence } => {
                format!("#Flaws: {flaws} Counter Evidence: {counter_evidence}")
            }
            Self::Inquiries { inquiries } => {
                let mut out = String::from("Inquiries:");
                for q in inquiries {
                    out.push_str(&format!(
                        "@ To Expert {} who reviews {}: {} ",
                        q.addressed_to, q.reviewed_option, q.question
                    ));
                }
                out.trim_end().to_string()
            }
            Self::Response { text } => text.clone(),
            Self::Verdict { final_reasoning, final_answer } => {
                format!("#Final Reasoning: {final_reasoning} #Final Answer: {final_answer}")
            }
        }
    }
}

fn marker(pattern: &str) -> Regex {
    Regex::new(&format!("(?i){pattern}")).unwrap()
}

static REASONING: LazyLock<Regex> = LazyLock::new(|| marker(r"#\s*Reasoning\s*:"));
static REVIEW_REASONING: LazyLock<Regex> = LazyLock::new(|| marker(r"#\s*(?:Review\s+)?Reasoning\s*:"));
static ANSWER: LazyLock<Regex> = LazyLock::new(|| marker(r"#\s*Answer\s*:"));
static FINAL_REASONING: LazyLock<Regex> = LazyLock::new(|| marker(r"#\s*Final\s+Reasoning\s*:"));
static FINAL_ANSWER: LazyLock<Regex> = LazyLock::new(|| marker(r"#\s*Final\s+Answer\s*:"));
static FLAWS: LazyLock<Regex> = LazyLock::new(|| marker(r"#\s*Flaws\s*:"));
// The critic template spells this marker without '#'; accept both.
static COUNTER: LazyLock<Regex> = LazyLock::new(|| marker(r"#?\s*Counter[\s-]+Evidence\s*:"));
static INQUIRY_START: LazyLock<Regex> = LazyLock::new(|| marker(r"@\s*To\s+Expert"));
static INQUIRY_HEADER: LazyLock<Regex> = LazyLock::new(|| {
    marker(r"^@\s*To\s+Expert\s*(\d+)\s*,?\s*who\s+reviews\s+(?:option\s+)?\(?([A-Za-z])\)?\s*:")
});

/// Byte range of the last match of `re` in `text[..limit]`.
fn last_match(re: &Regex, text: &str, limit: usize) -> Option<(usize, usize)> {
    re.find_iter(&text[..limit]).last().map(|m| (m.start(), m.end()))
}

/// Normalizes an answer field: the rest of the marker's line, stripped of
/// whitespace and punctuation, must be exactly one letter.
pub fn normalize_answer(field: &str) -> Result<OptionLetter, ParseError> {
    let line = field.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let tokens: Vec<&str> = line.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
    match tokens.as_slice() {
        [token] if token.chars().count() == 1 => {
            let c = token.chars().next().unwrap_or_default();
            if c.is_ascii_alphabetic() {
                OptionLetter::new(c).ok_or_else(|| ParseError::AnswerNotALetter(line.trim().into()))
            } else {
                Err(ParseError::AnswerNotALetter(line.trim().into()))
            }
        }
        _ => Err(ParseError::AnswerNotALetter(line.trim().into())),
    }
}

fn reasoning_and_answer(
    raw: &str,
    reasoning_marker: &Regex,
    reasoning_name: &'static str,
    answer_marker: &Regex,
    answer_name: &'static str,
) -> Result<(String, OptionLetter), ParseError> {
    let (a_start, a_end) = last_match(answer_marker, raw, raw.len()).ok_or(ParseError::MarkerMissing(answer_name))?;
    let (_, r_end) = last_match(reasoning_marker, raw, a_start).ok_or(ParseError::MarkerMissing(reasoning_name))?;
    let reasoning = raw[r_end..a_start].trim();
    if reasoning.is_empty() {
        return Err(ParseError::EmptyField(reasoning_name));
    }
    let answer = normalize_answer(&raw[a_end..])?;
    Ok((reasoning.to_string(), answer))
}

/// Parses `raw` under the output grammar of `stage`. Total: every input
/// yields either a report or a typed error.
pub fn parse_report(raw: &str, stage: Stage) -> Result<ParsedReport, ParseError> {
    match stage {
        Stage::Tier1 => {
            let (reasoning, answer) = reasoning_and_answer(raw, &REASONING, "#Reasoning", &ANSWER, "#Answer")?;
            Ok(ParsedReport::Diagnosis { reasoning, answer })
        }
        Stage::Tier2 => {
            let (reasoning, answer) =
                reasoning_and_answer(raw, &REVIEW_REASONING, "#Review Reasoning", &ANSWER, "#Answer")?;
            Ok(ParsedReport::Diagnosis { reasoning, answer })
        }
        Stage::LeaderVerdict => {
            let (final_reasoning, final_answer) = reasoning_and_answer(
                raw,
                &FINAL_REASONING,
                "#Final Reasoning",
                &FINAL_ANSWER,
                "#Final Answer",
            )?;
            Ok(ParsedReport::Verdict { final_reasoning, final_answer })
        }
        Stage::Critic => parse_risk(raw),
        Stage::LeaderInquiry => parse_inquiries(raw).map(|inquiries| ParsedReport::Inquiries { inquiries }),
        Stage::CriticResponse => {
            let text = raw.trim();
            if text.is_empty() {
                Err(ParseError::EmptyField("response"))
            } else {
                Ok(ParsedReport::Response { text: text.to_string() })
            }
        }
    }
}

fn parse_risk(raw: &str) -> Result<ParsedReport, ParseError> {
    let (c_start, c_end) = last_match(&COUNTER, raw, raw.len()).ok_or(ParseError::MarkerMissing("Counter Evidence"))?;
    let (_, f_end) = last_match(&FLAWS, raw, c_start).ok_or(ParseError::MarkerMissing("#Flaws"))?;
    let flaws = raw[f_end..c_start].trim();
    let counter = raw[c_end..].trim();
    if flaws.is_empty() {
        return Err(ParseError::EmptyField("#Flaws"));
    }
    if counter.is_empty() {
        return Err(ParseError::EmptyField("Counter Evidence"));
    }
    Ok(ParsedReport::Risk { flaws: flaws.to_string(), counter_evidence: counter.to_string() })
}

/// Parses the leader's inquiry block into exactly two inquiries, one per
/// expert, ordered by expert index.
pub fn parse_inquiries(raw: &str) -> Result<Vec<Inquiry>, ParseError> {
    let starts: Vec<usize> = INQUIRY_START.find_iter(raw).map(|m| m.start()).collect();
    let mut parsed = Vec::with_capacity(starts.len());
    for (i, &start) in starts.iter().enumerate() {
        let end = starts.get(i + 1).copied().unwrap_or(raw.len());
        let block = &raw[start..end];
        let cap = INQUIRY_HEADER.captures(block).ok_or_else(|| {
            ParseError::UnparsableHeader(block.chars().take(60).collect::<String>().trim().to_string())
        })?;
        let expert: u32 = cap[1].parse().map_err(|_| ParseError::UnparsableHeader(cap[0].to_string()))?;
        let option = OptionLetter::new(cap[2].chars().next().unwrap_or_default())
            .ok_or_else(|| ParseError::UnparsableHeader(cap[0].to_string()))?;
        let question = block[cap.get(0).map_or(0, |m| m.end())..].trim();
        parsed.push((expert, option, question));
    }
    if parsed.len() != 2 {
        return Err(ParseError::WrongArity(parsed.len()));
    }
    if parsed[0].0 == parsed[1].0 {
        return Err(ParseError::DuplicateExpert(parsed[0].0.min(255) as u8));
    }
    let mut inquiries = Vec::with_capacity(2);
    for (expert, option, question) in parsed {
        if !matches!(expert, 1 | 2) {
            return Err(ParseError::UnknownExpert(expert));
        }
        if question.is_empty() {
            return Err(ParseError::EmptyField("inquiry question"));
        }
        inquiries.push(Inquiry { addressed_to: expert as u8, reviewed_option: option, question: question.to_string() });
    }
    inquiries.sort_by_key(|q| q.addressed_to);
    Ok(inquiries)
}
