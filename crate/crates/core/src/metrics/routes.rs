use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::protocol::{OptionLetter, Route, Transcript};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RouteBucket {
    pub cases: usize,
    pub correct: usize,
}

impl RouteBucket {
    /// Percentage correct; `None` for an empty bucket.
    pub fn accuracy(&self) -> Option<f64> {
        (self.cases > 0).then(|| 100.0 * self.correct as f64 / self.cases as f64)
    }
}

/// Accuracy broken down by the route each case took. Only routes that
/// occurred appear.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RouteTable {
    pub buckets: BTreeMap<Route, RouteBucket>,
}

impl RouteTable {
    pub fn record(&mut self, route: Route, correct: bool) {
        let bucket = self.buckets.entry(route).or_default();
        bucket.cases += 1;
        bucket.correct += usize::from(correct);
    }

    pub fn merge(&mut self, other: &RouteTable) {
        for (route, b) in &other.buckets {
            let bucket = self.buckets.entry(*route).or_default();
            bucket.cases += b.cases;
            bucket.correct += b.correct;
        }
    }

    pub fn total_cases(&self) -> usize {
        self.buckets.values().map(|b| b.cases).sum()
    }

    pub fn get(&self, route: Route) -> Option<&RouteBucket> {
        self.buckets.get(&route)
    }
}

/// Per-route counts and accuracy. `gold` falls back to each transcript's
/// own gold answer when a case is absent from the map.
pub fn route_stats<'a>(
    transcripts: impl IntoIterator<Item = &'a Transcript>,
    gold: &HashMap<String, OptionLetter>,
) -> Result<RouteTable, MetricsError> {
    let mut table = RouteTable::default();
    for t in transcripts {
        let verdict = t.verdict().ok_or_else(|| MetricsError::MissingVerdict(t.case_id.clone()))?;
        let expected = gold
            .get(&t.case_id)
            .copied()
            .or(t.gold_answer)
            .ok_or_else(|| MetricsError::MissingGold(t.case_id.clone()))?;
        table.record(verdict.route_taken, verdict.answer == expected);
    }
    Ok(table)
}
