use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::protocol::OptionLetter;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub hypotheses: Vec<OptionLetter>,
    pub entropy_bits: f64,
    pub distinct_count: usize,
}

/// Shannon entropy, in bits, of the empirical distribution of hypothesis
/// letters proposed during one case.
pub fn trajectory_entropy(hypotheses: &[OptionLetter]) -> Result<TrajectoryMetrics, MetricsError> {
    if hypotheses.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let mut counts: BTreeMap<OptionLetter, usize> = BTreeMap::new();
    for h in hypotheses {
        *counts.entry(*h).or_insert(0) += 1;
    }
    let total = hypotheses.len() as f64;
    // p·log2(1/p) keeps unanimous trajectories at exactly 0.
    let entropy_bits = counts
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            p * (total / c as f64).log2()
        })
        .sum();
    Ok(TrajectoryMetrics { hypotheses: hypotheses.to_vec(), entropy_bits, distinct_count: counts.len() })
}
