//! Benchmark harness: dataset ingest, run configuration, parallel case
//! execution with per-case transcripts, and report aggregation.

pub mod config;
pub mod dataset;
pub mod inspect;
pub mod report;
pub mod runner;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{BackendSettings, JudgeSettings, RunConfig, RunSettings};
pub use dataset::{ingest, CaseLoadError, DatasetError, DatasetRecord, Subset};
pub use inspect::render_trace;
pub use report::{emit_report, render_text, score_dir, AccuracyCount, CaseRow, MeanStd, ReportBuilder, RunReport, TrialSummary, UsageSummary};
pub use runner::{run_benchmark, BackendProvider, ReplayProvider, RunOptions, SharedBackend};
pub use synthetic::ScriptPlan;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot read {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("cannot write {path}: {reason}")]
    OutputUnwritable { path: PathBuf, reason: String },
}
