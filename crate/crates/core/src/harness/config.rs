use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::backend::{LiveConfig, RetryPolicy};
use crate::metrics::{JudgeConfig, PriceTable};
use crate::prompts::PromptContext;
use crate::protocol::EngineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key. Keys never live in the file.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for BackendSettings {
    fn default() -> Self {
        let live = LiveConfig::default();
        Self {
            base_url: live.base_url,
            model: "default".into(),
            api_key_env: "UCA_API_KEY".into(),
            timeout_secs: live.timeout.as_secs(),
            max_retries: live.retry.max_retries,
            initial_backoff_ms: live.retry.initial_backoff.as_millis() as u64,
            max_in_flight: live.max_in_flight,
        }
    }
}

impl BackendSettings {
    pub fn live_config(&self) -> LiveConfig {
        LiveConfig {
            base_url: self.base_url.clone(),
            api_key: std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(self.timeout_secs),
            retry: RetryPolicy {
                max_retries: self.max_retries,
                initial_backoff: Duration::from_millis(self.initial_backoff_ms),
                ..RetryPolicy::default()
            },
            max_in_flight: self.max_in_flight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    /// Cases deliberated at the same time.
    pub max_parallel: usize,
    pub trials: u32,
    /// Free text stored with the report to tell runs apart.
    pub seed_label: String,
    pub output_dir: Option<PathBuf>,
    pub max_image_bytes: u64,
    /// Save a replayable recording per case.
    pub record: bool,
    /// Overrides for the bundled prompt templates.
    pub template_dir: Option<PathBuf>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            max_parallel: 4,
            trials: 1,
            seed_label: String::new(),
            output_dir: None,
            max_image_bytes: 8 * 1024 * 1024,
            record: false,
            template_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeSettings {
    pub enabled: bool,
    #[serde(flatten)]
    pub config: JudgeConfig,
}

/// Everything a benchmark run needs, read from one TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendSettings,
    pub engine: EngineConfig,
    pub prompt: Option<PromptContext>,
    pub run: RunSettings,
    pub prices: PriceTable,
    pub judge: JudgeSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Engine settings with the model and prompt context from their own
    /// sections applied.
    pub fn engine_config(&self) -> EngineConfig {
        let mut engine = self.engine.clone();
        engine.model_id = self.backend.model.clone();
        if let Some(prompt) = &self.prompt {
            engine.prompt = prompt.clone();
        }
        engine
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.run.max_parallel == 0 {
            return bad("run.max_parallel must be at least 1".into());
        }
        if self.run.trials == 0 {
            return bad("run.trials must be at least 1".into());
        }
        if self.backend.max_in_flight == 0 {
            return bad("backend.max_in_flight must be at least 1".into());
        }
        if self.judge.config.batch_size == 0 {
            return bad("judge.batch_size must be at least 1".into());
        }
        let e = &self.engine;
        for (name, t) in [
            ("tier1_temperature", e.tier1_temperature),
            ("tier2_temperature", e.tier2_temperature),
            ("tier3_critic_temperature", e.tier3_critic_temperature),
            ("tier3_inquiry_temperature", e.tier3_inquiry_temperature),
            ("arbitration_temperature", e.arbitration_temperature),
            ("judge.temperature", self.judge.config.temperature),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("{name} = {t} is outside [0, 2]"));
            }
        }
        if self.prices.input_per_1k < 0.0 || self.prices.output_per_1k < 0.0 {
            return bad("prices must be non-negative".into());
        }
        Ok(())
    }
}
