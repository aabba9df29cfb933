use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::LazyLock;

use regex::{Captures, Regex};

use super::{PromptError, Stage};

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([A-Z0-9][A-Z0-9 ]*)\}").unwrap());

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

/// Placeholder values, keyed by brace name without the braces.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings(BTreeMap<String, String>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.0.insert(name.into(), value.into());
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.0.insert(name.into(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        Self { name: name.into(), body: body.into() }
    }

    /// Distinct placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for cap in PLACEHOLDER.captures_iter(&self.body) {
            let name = cap[1].to_string();
            if !seen.contains(&name) {
                seen.push(name);
            }
        }
        seen
    }

    /// Literal single-pass substitution. Bound values are inserted verbatim
    /// and never rescanned for placeholders.
    pub fn render(&self, bindings: &Bindings) -> Result<String, PromptError> {
        if let Some(missing) = self.placeholders().into_iter().find(|p| bindings.get(p).is_none()) {
            return Err(PromptError::MissingBinding(missing));
        }
        let rendered = PLACEHOLDER.replace_all(&self.body, |cap: &Captures<'_>| {
            bindings.get(&cap[1]).unwrap_or_default().to_string()
        });
        Ok(rendered.into_owned())
    }
}

/// The six deliberation templates, one per stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: HashMap<Stage, PromptTemplate>,
}

impl TemplateSet {
    pub fn bundled() -> Self {
        let templates = Stage::ALL
            .into_iter()
            .map(|s| (s, PromptTemplate::new(s.template_file(), bundled_text(s).trim_end())))
            .collect();
        Self { templates }
    }

    /// Loads `<dir>/<stage file>` for each stage. Files absent from the
    /// directory fall back to the bundled text.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::bundled();
        for stage in Stage::ALL {
            let path = dir.join(stage.template_file());
            if path.exists() {
                let body = std::fs::read_to_string(&path)
                    .map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
                set.templates.insert(stage, PromptTemplate::new(stage.template_file(), body.trim_end()));
            }
        }
        Ok(set)
    }

    pub fn get(&self, stage: Stage) -> &PromptTemplate {
        &self.templates[&stage]
    }

    pub fn render(&self, stage: Stage, bindings: &Bindings) -> Result<String, PromptError> {
        self.get(stage).render(bindings)
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::bundled()
    }
}

fn bundled_text(stage: Stage) -> &'static str {
    match stage {
        Stage::Tier1 => include_str!("../../assets/templates/tier1.txt"),
        Stage::Tier2 => include_str!("../../assets/templates/tier2.txt"),
        Stage::Critic => include_str!("../../assets/templates/critic.txt"),
        Stage::LeaderInquiry => include_str!("../../assets/templates/leader_inquiry.txt"),
        Stage::CriticResponse => include_str!("../../assets/templates/critic_response.txt"),
        Stage::LeaderVerdict => include_str!("../../assets/templates/leader_verdict.txt"),
    }
}

pub fn bundled_judge_noise() -> PromptTemplate {
    PromptTemplate::new("judge_noise.txt", include_str!("../../assets/templates/judge_noise.txt").trim_end())
}

pub fn bundled_judge_evidence() -> PromptTemplate {
    PromptTemplate::new("judge_evidence.txt", include_str!("../../assets/templates/judge_evidence.txt").trim_end())
}
