//! Experiment configuration: a TOML file names the backend, models,
//! strategies, data files, and knobs; everything has a sensible default
//! except the things only the operator can know.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::EndpointConfig;
use crate::prompt::TemplateStyle;
use crate::schema::SchemaVariant;

/// Environment variable that overrides the endpoint base URL.
pub const ENDPOINT_ENV_VAR: &str = "MEDBENCH_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    ZeroShot,
    FewShot,
    Rag,
}

/// One strategy row in the config. Retrieval fields fall back to the global
/// retrieval settings; exemplar ids fall back to the standard pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplar_note_ids: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_budget: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerSetting {
    Lexical,
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Query the index with the whole note.
    FullNote,
    /// Query with the note's trailing diagnosis section (falls back to the
    /// whole note when a note has no such section).
    DiagnosisLines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSettings {
    pub k: usize,
    pub lines_per_chunk: usize,
    pub token_budget: usize,
    pub scorer: ScorerSetting,
    pub embedding_model: String,
    pub query_mode: QueryMode,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        RetrievalSettings {
            k: 5,
            lines_per_chunk: 1,
            token_budget: 2048,
            scorer: ScorerSetting::Lexical,
            embedding_model: "nomic-embed-text".to_string(),
            query_mode: QueryMode::FullNote,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub diagnosis_match_threshold: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { diagnosis_match_threshold: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub temperature: f64,
    pub seed: Option<i64>,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings { temperature: 0.0, seed: Some(42) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub endpoint: EndpointConfig,
    pub models: Vec<String>,
    pub strategies: Vec<StrategySpec>,
    #[serde(default = "default_schema_variant")]
    pub schema_variant: SchemaVariant,
    /// Inline the structure text into zero-shot/retrieval prompts.
    #[serde(default = "default_true")]
    pub schema_in_prompt: bool,
    /// Forward the structure as the backend's structured-output constraint.
    #[serde(default = "default_true")]
    pub use_constraint: bool,
    #[serde(default)]
    pub template_style: TemplateStyle,
    pub corpus_path: PathBuf,
    pub catalog_path: PathBuf,
    /// Extra reference documents (*.txt) to index alongside the catalog.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_docs_dir: Option<PathBuf>,
    #[serde(default = "default_one")]
    pub repetitions: u32,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub retrieval: RetrievalSettings,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub generation: GenerationSettings,
    /// Off, every recorded duration is 0.0, making rerun output byte-stable.
    #[serde(default = "default_true")]
    pub record_timings: bool,
}

fn default_schema_variant() -> SchemaVariant {
    SchemaVariant::Trivial
}

fn default_true() -> bool {
    true
}

fn default_one() -> u32 {
    1
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path:?}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config does not parse: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Parse config text. Pure: no filesystem, no environment.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    Ok(toml::from_str(text)?)
}

fn resolve_path(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Load a config file. Relative paths resolve against the config file's own
/// directory, and `MEDBENCH_ENDPOINT` (when set and non-empty) overrides the
/// endpoint URL.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut config = parse_config(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    resolve_path(base, &mut config.corpus_path);
    resolve_path(base, &mut config.catalog_path);
    resolve_path(base, &mut config.output_dir);
    if let Some(dir) = config.context_docs_dir.as_mut() {
        resolve_path(base, dir);
    }
    if let Ok(url) = std::env::var(ENDPOINT_ENV_VAR) {
        if !url.trim().is_empty() {
            config.endpoint.base_url = url;
        }
    }
    Ok(config)
}

/// The fully resolved config, for the run directory snapshot. Feeding this
/// back through `parse_config` reproduces the same configuration.
pub fn resolved_toml(config: &ExperimentConfig) -> String {
    toml::to_string_pretty(config).expect("config serializes")
}

/// Static problems a config can have before touching the network or disk.
pub fn config_issues(config: &ExperimentConfig) -> Vec<String> {
    let mut issues = Vec::new();
    if config.models.is_empty() {
        issues.push("models list is empty".to_string());
    }
    if config.strategies.is_empty() {
        issues.push("strategies list is empty".to_string());
    }
    if config.repetitions == 0 {
        issues.push("repetitions must be at least 1".to_string());
    }
    let t = config.eval.diagnosis_match_threshold;
    if !(0.0..=1.0).contains(&t) {
        issues.push(format!("diagnosis_match_threshold {t} is outside [0, 1]"));
    }
    if config.generation.temperature < 0.0 {
        issues.push(format!("temperature {} is negative", config.generation.temperature));
    }
    let has_rag = config.strategies.iter().any(|s| s.kind == StrategyKind::Rag);
    if has_rag {
        let k_zero = config
            .strategies
            .iter()
            .filter(|s| s.kind == StrategyKind::Rag)
            .any(|s| s.k.unwrap_or(config.retrieval.k) == 0);
        if k_zero {
            issues.push("a retrieval strategy has k = 0".to_string());
        }
        if config.retrieval.lines_per_chunk == 0 {
            issues.push("retrieval.lines_per_chunk must be at least 1".to_string());
        }
    }
    for s in &config.strategies {
        if s.kind == StrategyKind::FewShot {
            if let Some(ids) = &s.exemplar_note_ids {
                if ids.is_empty() {
                    issues.push("a few_shot strategy lists zero exemplar notes".to_string());
                }
            }
        }
    }
    issues
}
