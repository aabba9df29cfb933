//! Protocol-level metrics: decision-trajectory entropy, token and cost
//! ledgers, per-route accuracy, and judge-assisted transcript quality.

mod entropy;
mod judge;
mod ledger;
mod routes;

use thiserror::Error;

pub use entropy::{trajectory_entropy, TrajectoryMetrics};
pub use judge::{
    judge_evidence_coverage, judge_noise_ratio, parse_evidence_reply, parse_noise_reply, render_records,
    EvidenceCoverage, JudgeConfig, NoiseMetrics,
};
pub use ledger::{format_tokens_k, ledger_from_transcript, parse_tokens_k, LedgerRow, PriceTable, UsageLedger, UsageTotals};
pub use routes::{route_stats, RouteBucket, RouteTable};

use crate::backend::BackendError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("trajectory has no hypotheses")]
    EmptyTrajectory,
    #[error("no gold answer for case {0}")]
    MissingGold(String),
    #[error("case {0} has no verdict")]
    MissingVerdict(String),
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(BackendError),
    #[error("judge reply has no usable counts: {0:?}")]
    JudgeOutputUnparsable(String),
    #[error("judge prompt: {0}")]
    JudgePrompt(String),
}
