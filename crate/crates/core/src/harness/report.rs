use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::Subset;
use super::HarnessError;
use crate::metrics::{format_tokens_k, trajectory_entropy, PriceTable, RouteTable, UsageLedger, UsageTotals};
use crate::protocol::{OptionLetter, Route, Transcript};

pub const LABEL_SUBSET: &str = "subset";
pub const LABEL_TRIAL: &str = "trial";

/// Outcome of one case in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub trial: u32,
    pub case_id: String,
    pub subset: Option<Subset>,
    pub gold: Option<OptionLetter>,
    pub answer: Option<OptionLetter>,
    pub route: Option<Route>,
    pub correct: Option<bool>,
    /// Model calls made, parse retries included.
    pub model_calls: usize,
    pub first_attempt_calls: usize,
    pub entropy_bits: Option<f64>,
    pub usage: UsageTotals,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CaseRow {
    pub fn from_transcript(transcript: &Transcript, trial: u32, subset: Option<Subset>) -> (Self, UsageLedger) {
        let ledger = UsageLedger::from_transcript(transcript);
        let verdict = transcript.verdict();
        let answer = verdict.map(|v| v.answer);
        let gold = transcript.gold_answer;
        let row = Self {
            trial,
            case_id: transcript.case_id.clone(),
            subset,
            gold,
            answer,
            route: verdict.map(|v| v.route_taken),
            correct: answer.zip(gold).map(|(a, g)| a == g),
            model_calls: transcript.model_calls().count(),
            first_attempt_calls: transcript.first_attempt_calls(),
            entropy_bits: trajectory_entropy(&transcript.hypotheses()).ok().map(|m| m.entropy_bits),
            usage: ledger.totals,
            error: transcript.failure.clone().or_else(|| verdict.is_none().then(|| "no verdict".to_string())),
        };
        (row, ledger)
    }

    /// A case that never reached the engine.
    pub fn failed(trial: u32, case_id: &str, subset: Option<Subset>, gold: Option<OptionLetter>, error: String) -> Self {
        Self {
            trial,
            case_id: case_id.to_string(),
            subset,
            gold,
            answer: None,
            route: None,
            correct: None,
            model_calls: 0,
            first_attempt_calls: 0,
            entropy_bits: None,
            usage: UsageTotals::default(),
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCount {
    pub cases: usize,
    pub answered: usize,
    pub correct: usize,
}

impl AccuracyCount {
    fn add(&mut self, row: &CaseRow) {
        self.cases += 1;
        if let Some(c) = row.correct {
            self.answered += 1;
            self.correct += usize::from(c);
        }
    }

    /// Percentage over answered cases; unanswered cases are reported
    /// separately and left out of the denominator.
    pub fn accuracy(&self) -> Option<f64> {
        (self.answered > 0).then(|| 100.0 * self.correct as f64 / self.answered as f64)
    }

    pub fn unanswered(&self) -> usize {
        self.cases - self.answered
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: u32,
    pub full: AccuracyCount,
    pub closed: AccuracyCount,
    pub full_accuracy: Option<f64>,
    pub closed_accuracy: Option<f64>,
}

/// Mean and population standard deviation across trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Present with two or more trials.
    pub std: Option<f64>,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt());
        Some(Self { mean, std, n: values.len() })
    }

    /// `61.0±1.0`, or just `61.0` for a single trial.
    pub fn render(&self) -> String {
        match self.std {
            Some(s) => format!("{:.1}±{:.1}", self.mean, s),
            None => format!("{:.1}", self.mean),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub totals: UsageTotals,
    pub by_role: BTreeMap<String, UsageTotals>,
    pub cost: f64,
    /// Input/output tokens in thousands, e.g. `4.40/0.37`.
    pub tokens_k: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model_id: String,
    pub seed_label: String,
    pub trials: Vec<TrialSummary>,
    pub full_accuracy: Option<MeanStd>,
    pub closed_accuracy: Option<MeanStd>,
    pub routes: RouteTable,
    pub usage: UsageSummary,
    pub cases: usize,
    pub failed_cases: usize,
    pub mean_calls_per_case: Option<f64>,
    pub mean_first_attempt_calls: Option<f64>,
    pub mean_entropy_bits: Option<f64>,
    pub rows: Vec<CaseRow>,
}

impl RunReport {
    pub fn has_failures(&self) -> bool {
        self.failed_cases > 0
    }

    pub fn trial(&self, trial: u32) -> Option<&TrialSummary> {
        self.trials.iter().find(|t| t.trial == trial)
    }
}

/// Accumulates per-case rows and usage into a [`RunReport`].
#[derive(Debug, Default)]
pub struct ReportBuilder {
    rows: Vec<CaseRow>,
    by_role: BTreeMap<String, UsageTotals>,
    totals: UsageTotals,
}

impl ReportBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, row: CaseRow, ledger: Option<&UsageLedger>) {
        if let Some(ledger) = ledger {
            for (role, t) in ledger.by_role() {
                *self.by_role.entry(role).or_default() += t;
            }
        }
        self.totals += row.usage;
        self.rows.push(row);
    }

    pub fn finish(mut self, model_id: &str, seed_label: &str, prices: &PriceTable) -> RunReport {
        self.rows.sort_by(|a, b| (a.trial, &a.case_id).cmp(&(b.trial, &b.case_id)));
        let mut per_trial: BTreeMap<u32, (AccuracyCount, AccuracyCount)> = BTreeMap::new();
        let mut routes = RouteTable::default();
        for row in &self.rows {
            let (full, closed) = per_trial.entry(row.trial).or_default();
            full.add(row);
            if row.subset == Some(Subset::Closed) {
                closed.add(row);
            }
            if let (Some(route), Some(correct)) = (row.route, row.correct) {
                routes.record(route, correct);
            }
        }
        let trials: Vec<TrialSummary> = per_trial
            .into_iter()
            .map(|(trial, (full, closed))| TrialSummary {
                trial,
                full,
                closed,
                full_accuracy: full.accuracy(),
                closed_accuracy: closed.accuracy(),
            })
            .collect();
        let full: Vec<f64> = trials.iter().filter_map(|t| t.full_accuracy).collect();
        let closed: Vec<f64> = trials.iter().filter_map(|t| t.closed_accuracy).collect();
        let mean = |values: Vec<f64>| (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
        RunReport {
            model_id: model_id.to_string(),
            seed_label: seed_label.to_string(),
            full_accuracy: MeanStd::of(&full),
            closed_accuracy: MeanStd::of(&closed),
            routes,
            usage: UsageSummary {
                totals: self.totals,
                by_role: self.by_role,
                cost: self.totals.cost(prices),
                tokens_k: format_tokens_k(self.totals.input_tokens, self.totals.output_tokens),
            },
            cases: self.rows.len(),
            failed_cases: self.rows.iter().filter(|r| r.error.is_some()).count(),
            mean_calls_per_case: mean(self.rows.iter().map(|r| r.model_calls as f64).collect()),
            mean_first_attempt_calls: mean(self.rows.iter().map(|r| r.first_attempt_calls as f64).collect()),
            mean_entropy_bits: mean(self.rows.iter().filter_map(|r| r.entropy_bits).collect()),
            trials,
            rows: self.rows,
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.1}"))
}

/// Plain-text summary tables.
pub fn render_text(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model: {}  label: {}", report.model_id, report.seed_label);
    let _ = writeln!(out, "cases: {}  failed: {}", report.cases, report.failed_cases);
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<6} {:>9} {:>11} {:>9} {:>11}", "trial", "full (%)", "closed (%)", "answered", "unanswered");
    for t in &report.trials {
        let _ = writeln!(
            out,
            "{:<6} {:>9} {:>11} {:>9} {:>11}",
            t.trial,
            pct(t.full_accuracy),
            pct(t.closed_accuracy),
            t.full.answered,
            t.full.unanswered()
        );
    }
    let render = |m: &Option<MeanStd>| m.as_ref().map_or("-".into(), MeanStd::render);
    let _ = writeln!(out, "{:<6} {:>9} {:>11}", "mean", render(&report.full_accuracy), render(&report.closed_accuracy));
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<9} {:>7} {:>8} {:>8}", "route", "cases", "correct", "acc (%)");
    for (route, b) in &report.routes.buckets {
        let _ = writeln!(out, "{:<9} {:>7} {:>8} {:>8}", route.as_str(), b.cases, b.correct, pct(b.accuracy()));
    }
    let _ = writeln!(out);
    let u = &report.usage;
    let _ = writeln!(out, "Tokens(K) in/out: {}", u.tokens_k);
    let _ = writeln!(out, "API calls: {} ({} estimated)", u.totals.api_calls, u.totals.estimated_calls);
    let _ = writeln!(
        out,
        "mean calls per case: {}",
        report.mean_calls_per_case.map_or("-".into(), |m| format!("{m:.2}"))
    );
    let _ = writeln!(
        out,
        "mean trajectory entropy (bits): {}",
        report.mean_entropy_bits.map_or("-".into(), |m| format!("{m:.3}"))
    );
    let _ = writeln!(out, "cost: {:.4}", u.cost);
    for (role, t) in &u.by_role {
        let _ = writeln!(out, "  {role:<18} {:>4} calls  {}", t.api_calls, format_tokens_k(t.input_tokens, t.output_tokens));
    }
    out
}

/// Writes `report.json` and `report.txt` into `dir`.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
    let unwritable = |path: &Path, e: std::io::Error| HarnessError::OutputUnwritable { path: path.to_path_buf(), reason: e.to_string() };
    std::fs::create_dir_all(dir).map_err(|e| unwritable(dir, e))?;
    let json_path = dir.join("report.json");
    let text_path = dir.join("report.txt");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(&json_path, json).map_err(|e| unwritable(&json_path, e))?;
    std::fs::write(&text_path, render_text(report)).map_err(|e| unwritable(&text_path, e))?;
    Ok((json_path, text_path))
}

fn collect_json(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_json(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    Ok(())
}

/// Rebuilds a report from transcript files under `dir`. Files that are not
/// transcripts (recordings, reports) are skipped. `gold` overrides the gold
/// answer stored in each transcript.
pub fn score_dir(
    dir: &Path,
    gold: &HashMap<String, OptionLetter>,
    prices: &PriceTable,
) -> Result<RunReport, HarnessError> {
    let mut files = Vec::new();
    collect_json(dir, &mut files).map_err(|e| HarnessError::Io { path: dir.to_path_buf(), reason: e.to_string() })?;
    files.sort();
    let mut builder = ReportBuilder::new();
    let mut model_id = String::new();
    for path in files {
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::Io { path: path.clone(), reason: e.to_string() })?;
        let Ok(mut transcript) = Transcript::from_json(&text) else {
            continue;
        };
        if let Some(g) = gold.get(&transcript.case_id) {
            transcript.gold_answer = Some(*g);
        }
        if model_id.is_empty() {
            if let Some(call) = transcript.model_calls().next() {
                model_id = call.request.model_id.clone();
            }
        }
        let (row, ledger) = CaseRow::from_transcript(&transcript, trial_label(&transcript), subset_label(&transcript));
        builder.add(row, Some(&ledger));
    }
    Ok(builder.finish(&model_id, "", prices))
}

pub fn trial_label(t: &Transcript) -> u32 {
    t.labels.get(LABEL_TRIAL).and_then(|v| v.parse().ok()).unwrap_or(1)
}

pub fn subset_label(t: &Transcript) -> Option<Subset> {
    match t.labels.get(LABEL_SUBSET).map(String::as_str) {
        Some("closed") => Some(Subset::Closed),
        Some("open") => Some(Subset::Open),
        _ => None,
    }
}
