use std::collections::BTreeMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::prompts::Stage;
use crate::protocol::{AgentRole, Transcript};

/// Prices per 1,000 tokens, in whatever currency the caller uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub role: AgentRole,
    pub stage: Stage,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub estimated: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub api_calls: u64,
    pub estimated_calls: u64,
}

impl UsageTotals {
    pub fn cost(&self, prices: &PriceTable) -> f64 {
        (self.input_tokens as f64 * prices.input_per_1k + self.output_tokens as f64 * prices.output_per_1k) / 1000.0
    }
}

impl AddAssign for UsageTotals {
    fn add_assign(&mut self, rhs: Self) {
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
        self.api_calls += rhs.api_calls;
        self.estimated_calls += rhs.estimated_calls;
    }
}

impl AddAssign<&LedgerRow> for UsageTotals {
    fn add_assign(&mut self, row: &LedgerRow) {
        self.input_tokens += row.input_tokens;
        self.output_tokens += row.output_tokens;
        self.api_calls += 1;
        self.estimated_calls += u64::from(row.estimated);
    }
}

/// Per-call token usage with exact integer totals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub rows: Vec<LedgerRow>,
    pub totals: UsageTotals,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

impl UsageLedger {
    /// One row per model call in the transcript, retries included.
    pub fn from_transcript(transcript: &Transcript) -> Self {
        let mut ledger = Self::default();
        for call in transcript.model_calls() {
            ledger.push(LedgerRow {
                role: call.role,
                stage: call.stage,
                input_tokens: call.usage.input_tokens,
                output_tokens: call.usage.output_tokens,
                estimated: call.usage.estimated,
            });
        }
        ledger
    }

    pub fn push(&mut self, row: LedgerRow) {
        self.totals += &row;
        self.rows.push(row);
        self.cost = None;
    }

    pub fn priced(mut self, prices: &PriceTable) -> Self {
        self.cost = Some(self.totals.cost(prices));
        self
    }

    pub fn by_role(&self) -> BTreeMap<String, UsageTotals> {
        let mut out: BTreeMap<String, UsageTotals> = BTreeMap::new();
        for row in &self.rows {
            *out.entry(row.role.label()).or_default() += row;
        }
        out
    }
}

pub fn ledger_from_transcript(transcript: &Transcript, prices: &PriceTable) -> UsageLedger {
    UsageLedger::from_transcript(transcript).priced(prices)
}

fn hundredths_of_k(tokens: u64) -> u64 {
    (tokens + 5) / 10
}

/// Renders token counts as `input/output` in thousands with two decimals,
/// e.g. 4400 and 370 tokens become `4.40/0.37`. Rounds half up to the
/// nearest 10 tokens.
pub fn format_tokens_k(input_tokens: u64, output_tokens: u64) -> String {
    let fmt = |t: u64| {
        let h = hundredths_of_k(t);
        format!("{}.{:02}", h / 100, h % 100)
    };
    format!("{}/{}", fmt(input_tokens), fmt(output_tokens))
}

/// Inverse of [`format_tokens_k`], exact to the rendered 10-token resolution.
pub fn parse_tokens_k(text: &str) -> Option<(u64, u64)> {
    let parse = |s: &str| -> Option<u64> {
        let (whole, frac) = s.trim().trim_end_matches('K').trim().split_once('.')?;
        if frac.len() != 2 {
            return None;
        }
        Some(whole.parse::<u64>().ok()? * 1000 + frac.parse::<u64>().ok()? * 10)
    };
    let (a, b) = text.split_once('/')?;
    Some((parse(a)?, parse(b)?))
}
