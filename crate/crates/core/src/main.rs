use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use ucagents::backend::{ChatBackend, OpenAiCompatibleBackend};
use ucagents::harness::{
    emit_report, ingest, render_text, render_trace, run_benchmark, score_dir, BackendProvider, HarnessError,
    ReplayProvider, RunConfig, RunOptions, RunReport, SharedBackend,
};
use ucagents::metrics::{judge_noise_ratio, PriceTable};
use ucagents::prompts::{bundled_judge_noise, TemplateSet};
use ucagents::protocol::{Engine, Transcript};

#[derive(Parser)]
#[command(name = "ucagents", version, about = "Three-tier multi-agent deliberation for medical visual question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a dataset against a live OpenAI-compatible endpoint.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides `run.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Save replayable recordings next to the transcripts.
        #[arg(long)]
        record: bool,
    },
    /// Re-run a dataset offline from recordings of an earlier run.
    Replay {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory of the recorded run.
        #[arg(long)]
        recordings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild the report from transcript files.
    Score {
        transcripts: PathBuf,
        /// Dataset whose gold answers override those in the transcripts.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Config providing prices.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a readable trace of one transcript.
    Inspect { transcript: PathBuf },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, HarnessError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn build_engine(config: &RunConfig) -> Result<Engine, HarnessError> {
    let templates = match &config.run.template_dir {
        Some(dir) => TemplateSet::load_dir(dir).map_err(|e| HarnessError::Config(e.to_string()))?,
        None => TemplateSet::bundled(),
    };
    Ok(Engine::new(config.engine_config(), templates))
}

fn live_backend(config: &RunConfig) -> Result<Arc<dyn ChatBackend>, HarnessError> {
    let backend = OpenAiCompatibleBackend::new(config.backend.live_config()).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(Arc::new(backend))
}

async fn execute(
    dataset: &Path,
    config: &RunConfig,
    provider: Arc<dyn BackendProvider>,
    out: &Path,
    record: bool,
) -> Result<RunReport, HarnessError> {
    let records = ingest(dataset)?;
    let engine = build_engine(config)?;
    let options = RunOptions {
        trials: config.run.trials,
        max_parallel: config.run.max_parallel,
        output_dir: Some(out.to_path_buf()),
        record,
        max_image_bytes: config.run.max_image_bytes,
        prices: config.prices,
        seed_label: config.run.seed_label.clone(),
    };
    run_benchmark(&records, &engine, provider, &options).await
}

async fn judge(config: &RunConfig, out: &Path, report: &RunReport) {
    let mut transcripts = Vec::new();
    for row in report.rows.iter().filter(|r| r.error.is_none()) {
        let path = ucagents::harness::runner::transcript_path(out, &row.case_id, row.trial);
        if let Ok(t) = Transcript::load(&path) {
            transcripts.push(t);
        }
    }
    let backend = match live_backend(config) {
        Ok(b) => b,
        Err(e) => return tracing::warn!("judge skipped: {e}"),
    };
    let template = bundled_judge_noise();
    let mut results = Vec::new();
    for batch in transcripts.chunks(config.judge.config.batch_size) {
        match judge_noise_ratio(batch, backend.as_ref(), &template, &config.judge.config).await {
            Ok(m) => results.push(m),
            Err(e) => tracing::warn!("judge batch failed: {e}"),
        }
    }
    let json = serde_json::to_string_pretty(&results).expect("judge results serialize");
    if let Err(e) = std::fs::write(out.join("noise.json"), json) {
        tracing::warn!("cannot write noise.json: {e}");
    }
}

fn finish(report: &RunReport, out: &Path) -> Result<ExitCode, HarnessError> {
    emit_report(report, out)?;
    print!("{}", render_text(report));
    Ok(if report.has_failures() { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

async fn dispatch(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Run { dataset, config, out, record } => {
            let config = load_config(config.as_deref())?;
            let out = out
                .or_else(|| config.run.output_dir.clone())
                .ok_or_else(|| HarnessError::Config("no output directory: pass --out or set run.output_dir".into()))?;
            let provider: Arc<dyn BackendProvider> = Arc::new(SharedBackend(live_backend(&config)?));
            let report = execute(&dataset, &config, provider, &out, record || config.run.record).await?;
            if config.judge.enabled {
                judge(&config, &out, &report).await;
            }
            finish(&report, &out)
        }
        Command::Replay { dataset, config, recordings, out } => {
            let config = load_config(config.as_deref())?;
            let provider: Arc<dyn BackendProvider> = Arc::new(ReplayProvider { dir: recordings });
            let report = execute(&dataset, &config, provider, &out, false).await?;
            finish(&report, &out)
        }
        Command::Score { transcripts, dataset, config, out } => {
            let prices = match config {
                Some(p) => RunConfig::load(&p)?.prices,
                None => PriceTable::default(),
            };
            let gold: HashMap<_, _> = match dataset {
                Some(d) => ingest(&d)?.into_iter().map(|r| (r.case_id, r.gold)).collect(),
                None => HashMap::new(),
            };
            let report = score_dir(&transcripts, &gold, &prices)?;
            finish(&report, out.as_deref().unwrap_or(&transcripts))
        }
        Command::Inspect { transcript } => {
            let t = Transcript::load(&transcript)
                .map_err(|e| HarnessError::Io { path: transcript.clone(), reason: e.to_string() })?;
            print!("{}", render_trace(&t));
            let violations = t.violations();
            for v in &violations {
                println!("violation: {v}");
            }
            Ok(if violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
