use std::path::{Path, PathBuf};
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use tracing::{info, warn};

use super::dataset::DatasetRecord;
use super::report::{CaseRow, ReportBuilder, RunReport, LABEL_SUBSET, LABEL_TRIAL};
use super::HarnessError;
use crate::backend::{record_session, replay_session, BackendError, ChatBackend, Recording};
use crate::metrics::{PriceTable, UsageLedger};
use crate::protocol::{Engine, Transcript};

/// Supplies the backend for one case in one trial.
pub trait BackendProvider: Send + Sync {
    fn session(&self, case_id: &str, trial: u32) -> Result<Arc<dyn ChatBackend>, BackendError>;
}

impl<F> BackendProvider for F
where
    F: Fn(&str, u32) -> Result<Arc<dyn ChatBackend>, BackendError> + Send + Sync,
{
    fn session(&self, case_id: &str, trial: u32) -> Result<Arc<dyn ChatBackend>, BackendError> {
        self(case_id, trial)
    }
}

/// The same backend for every case.
pub struct SharedBackend(pub Arc<dyn ChatBackend>);

impl BackendProvider for SharedBackend {
    fn session(&self, _case_id: &str, _trial: u32) -> Result<Arc<dyn ChatBackend>, BackendError> {
        Ok(self.0.clone())
    }
}

/// Serves recordings written by an earlier run with `record` enabled.
pub struct ReplayProvider {
    pub dir: PathBuf,
}

impl BackendProvider for ReplayProvider {
    fn session(&self, case_id: &str, trial: u32) -> Result<Arc<dyn ChatBackend>, BackendError> {
        let path = recording_path(&self.dir, case_id, trial);
        let recording = Recording::load(&path).map_err(|e| BackendError::InvalidRequest(format!("{}: {e}", path.display())))?;
        Ok(Arc::new(replay_session(recording)))
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub trials: u32,
    pub max_parallel: usize,
    /// Transcripts go to `<dir>/trial-<n>/`; nothing is written when `None`.
    pub output_dir: Option<PathBuf>,
    /// Save recordings under `<dir>/recordings/trial-<n>/`.
    pub record: bool,
    pub max_image_bytes: u64,
    pub prices: PriceTable,
    pub seed_label: String,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            trials: 1,
            max_parallel: 4,
            output_dir: None,
            record: false,
            max_image_bytes: 8 * 1024 * 1024,
            prices: PriceTable::default(),
            seed_label: String::new(),
        }
    }
}

/// File name component for a case id; anything outside `[A-Za-z0-9._-]`
/// becomes `_`.
pub fn file_stem(case_id: &str) -> String {
    case_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

pub fn transcript_path(output_dir: &Path, case_id: &str, trial: u32) -> PathBuf {
    output_dir.join(format!("trial-{trial}")).join(format!("{}.json", file_stem(case_id)))
}

pub fn recording_path(output_dir: &Path, case_id: &str, trial: u32) -> PathBuf {
    output_dir
        .join("recordings")
        .join(format!("trial-{trial}"))
        .join(format!("{}.json", file_stem(case_id)))
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    let unwritable = |e: std::io::Error| HarnessError::OutputUnwritable { path: path.to_path_buf(), reason: e.to_string() };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(unwritable)?;
    }
    std::fs::write(path, text).map_err(unwritable)
}

struct Job {
    trial: u32,
    record: DatasetRecord,
}

async fn run_one(
    job: Job,
    engine: Engine,
    provider: Arc<dyn BackendProvider>,
    options: Arc<RunOptions>,
) -> Result<(CaseRow, Option<UsageLedger>), HarnessError> {
    let Job { trial, record } = job;
    let subset = Some(record.subset);
    let mut transcript = Transcript::new(record.case_id.clone());
    transcript.gold_answer = Some(record.gold);

    let prepared = record
        .to_case(options.max_image_bytes)
        .map_err(|e| e.to_string())
        .and_then(|case| provider.session(&record.case_id, trial).map(|b| (case, b)).map_err(|e| e.to_string()));

    let mut recording = None;
    match prepared {
        Err(reason) => transcript.failure = Some(reason),
        Ok((case, backend)) => {
            let recorder = options.record.then(|| Arc::new(record_session(backend.clone())));
            let backend: Arc<dyn ChatBackend> = match &recorder {
                Some(r) => r.clone(),
                None => backend,
            };
            transcript = match engine.run_case(&case, backend.as_ref()).await {
                Ok(outcome) => outcome.transcript,
                Err(failure) => {
                    warn!(case = %record.case_id, trial, error = %failure, "case failed");
                    failure.transcript
                }
            };
            recording = recorder.map(|r| r.recording());
        }
    }
    transcript.labels.insert(LABEL_SUBSET.into(), record.subset.as_str().into());
    transcript.labels.insert(LABEL_TRIAL.into(), trial.to_string());

    if let Some(dir) = &options.output_dir {
        write_file(&transcript_path(dir, &record.case_id, trial), &transcript.to_json())?;
        if let Some(rec) = &recording {
            let json = serde_json::to_string_pretty(rec).expect("recording serializes");
            write_file(&recording_path(dir, &record.case_id, trial), &json)?;
        }
    }
    let (row, ledger) = CaseRow::from_transcript(&transcript, trial, subset);
    Ok((row, Some(ledger)))
}

/// Runs every record for every trial with at most `max_parallel` cases in
/// flight. A failing or panicking case is recorded in its row and never
/// stops the run; only unwritable output aborts it.
pub async fn run_benchmark(
    records: &[DatasetRecord],
    engine: &Engine,
    provider: Arc<dyn BackendProvider>,
    options: &RunOptions,
) -> Result<RunReport, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Config("dataset has no records".into()));
    }
    let options = Arc::new(options.clone());
    let jobs: Vec<Job> = (1..=options.trials)
        .flat_map(|trial| records.iter().map(move |r| Job { trial, record: r.clone() }))
        .collect();
    info!(cases = records.len(), trials = options.trials, "starting benchmark");

    let mut results = stream::iter(jobs)
        .map(|job| {
            let (trial, case_id, subset, gold) = (job.trial, job.record.case_id.clone(), job.record.subset, job.record.gold);
            let handle = tokio::spawn(run_one(job, engine.clone(), provider.clone(), options.clone()));
            async move {
                match handle.await {
                    Ok(result) => result,
                    Err(join) => {
                        let reason = if join.is_panic() { "case panicked" } else { "case cancelled" };
                        warn!(case = %case_id, trial, "{reason}");
                        Ok((CaseRow::failed(trial, &case_id, Some(subset), Some(gold), reason.into()), None))
                    }
                }
            }
        })
        .buffer_unordered(options.max_parallel.max(1));

    let mut builder = ReportBuilder::new();
    while let Some(result) = results.next().await {
        let (row, ledger) = result?;
        builder.add(row, ledger.as_ref());
    }
    Ok(builder.finish(&engine.config().model_id, &options.seed_label, &options.prices))
}
