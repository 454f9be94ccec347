//! Pipeline configuration: a TOML file, `--set section.key=value`
//! overrides, then dedicated command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use reviewlens_core::assignment::AssignOptions;
use reviewlens_core::corpus::{
    Analyzer, CorpusError, Preprocessor, ReviewFormat, SpellChecker, StopWords,
};
use reviewlens_core::extraction::ExtractionConfig;
use reviewlens_core::gateway::{
    Gateway, GatewayConfig, MockBackend, MockMode, PromptSet, RemoteBackend, RemoteConfig,
};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives the batch shuffle and the mock backend.
    pub seed: u64,
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub extraction: ExtractionSection,
    pub assignment: AssignmentSection,
    pub suggestion: SuggestionSection,
    pub evaluation: EvaluationSection,
    pub backend: BackendSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub reviews: Option<PathBuf>,
    /// `jsonl` or `csv`; guessed from the extension when absent.
    pub reviews_format: Option<String>,
    pub release_notes: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub ground_truth: Option<PathBuf>,
    pub match_labels: Option<PathBuf>,
    pub shots: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub spell_dictionary: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            reviews: None,
            reviews_format: None,
            release_notes: None,
            prompts_dir: None,
            out_dir: PathBuf::from("out"),
            ground_truth: None,
            match_labels: None,
            shots: None,
            stopwords: None,
            spell_dictionary: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Prefix the body with "title. " when a title exists.
    pub concat_title: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { concat_title: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSection {
    pub k: usize,
    pub similarity_threshold: f64,
    pub convergence_window: usize,
    pub batch_size: usize,
    pub converge_unordered: bool,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        let d = ExtractionConfig::default();
        Self {
            k: d.k,
            similarity_threshold: d.similarity_threshold,
            convergence_window: d.convergence_window,
            batch_size: d.batch_size,
            converge_unordered: d.converge_unordered,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignmentSection {
    pub chunk_size: usize,
    pub fallback_threshold: f64,
    /// Number of automatically chosen examples when no shots file is given.
    pub n_shots: usize,
}

impl Default for AssignmentSection {
    fn default() -> Self {
        let d = AssignOptions::default();
        Self {
            chunk_size: d.chunk_size,
            fallback_threshold: d.fallback_threshold,
            n_shots: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdfScope {
    /// Every review of the category.
    Category,
    /// Only the target app's reviews.
    TargetApp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuggestionSection {
    /// Apps to analyse; empty means every app in the corpus.
    pub target_apps: Vec<String>,
    /// Restrict ranking to one feature instead of the top ones.
    pub feature: Option<String>,
    pub top_features: usize,
    pub top_complaints: usize,
    pub sample_size: usize,
    pub n_suggestions: usize,
    pub idf_scope: IdfScope,
    pub length_normalized: bool,
    /// Skip complaints without earlier competitor praise instead of failing.
    pub allow_empty_history: bool,
}

impl Default for SuggestionSection {
    fn default() -> Self {
        Self {
            target_apps: Vec::new(),
            feature: None,
            top_features: 3,
            top_complaints: 3,
            sample_size: 10,
            n_suggestions: 3,
            idf_scope: IdfScope::Category,
            length_normalized: false,
            allow_empty_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub match_threshold: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            match_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub mock_mode: MockMode,
    pub endpoint: String,
    pub model: String,
    pub embedding_model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    pub timeout_secs: u64,
    pub context_tokens: usize,
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_concurrency: usize,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub embed_batch: usize,
}

impl Default for BackendSection {
    fn default() -> Self {
        let r = RemoteConfig::default();
        let g = GatewayConfig::default();
        Self {
            kind: BackendKind::Mock,
            mock_mode: MockMode::Normal,
            endpoint: r.endpoint,
            model: r.model,
            embedding_model: r.embedding_model,
            auth_env: r.auth_env,
            timeout_secs: r.timeout_secs,
            context_tokens: r.context_tokens,
            max_retries: g.max_retries,
            base_delay_ms: g.base_delay.as_millis() as u64,
            max_concurrency: g.max_concurrency,
            max_output_tokens: g.max_output_tokens,
            temperature: g.temperature,
            embed_batch: g.embed_batch,
        }
    }
}

impl PipelineConfig {
    /// Reads `path`, applies `key=value` overrides and resolves relative
    /// paths against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut table: toml::Table =
            text.parse()
                .map_err(|e: toml::de::Error| CliError::Config {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    pub fn extraction_config(&self) -> ExtractionConfig {
        let e = &self.extraction;
        ExtractionConfig {
            k: e.k,
            similarity_threshold: e.similarity_threshold,
            convergence_window: e.convergence_window,
            batch_size: e.batch_size,
            shuffle_seed: self.seed,
            converge_unordered: e.converge_unordered,
        }
    }

    pub fn assign_options(&self) -> AssignOptions {
        AssignOptions {
            chunk_size: self.assignment.chunk_size,
            fallback_threshold: self.assignment.fallback_threshold,
        }
    }

    pub fn reviews_path(&self) -> Result<&Path, CliError> {
        self.paths
            .reviews
            .as_deref()
            .ok_or(CliError::MissingSetting("paths.reviews"))
    }

    pub fn reviews_format(&self) -> Result<ReviewFormat, CliError> {
        match &self.paths.reviews_format {
            Some(f) => Ok(f.parse()?),
            None => Ok(ReviewFormat::from_path(self.reviews_path()?)),
        }
    }

    /// Every configured input must exist, except match labels, which are
    /// written by hand after `suggest` and checked by `evaluate`.
    pub fn check_paths(&self) -> Result<(), CliError> {
        let p = &self.paths;
        for path in [
            &p.reviews,
            &p.release_notes,
            &p.prompts_dir,
            &p.ground_truth,
            &p.shots,
            &p.stopwords,
            &p.spell_dictionary,
        ]
        .into_iter()
        .flatten()
        {
            if !path.exists() {
                return Err(CliError::MissingPath(path.clone()));
            }
        }
        Ok(())
    }

    pub fn analyzer(&self) -> Result<Analyzer, CorpusError> {
        let stopwords = match &self.paths.stopwords {
            Some(p) => StopWords::from_file(p)?,
            None => StopWords::english(),
        };
        let mut pre = Preprocessor::new(stopwords);
        if let Some(p) = &self.paths.spell_dictionary {
            pre = pre.with_spell_checker(SpellChecker::from_file(p)?);
        }
        Ok(Analyzer::new(pre, self.corpus.concat_title))
    }

    pub fn prompts(&self) -> Result<PromptSet, CliError> {
        Ok(match &self.paths.prompts_dir {
            Some(dir) => PromptSet::load_dir(dir)?,
            None => PromptSet::builtin(),
        })
    }

    pub fn gateway(&self) -> Result<Gateway, CliError> {
        let b = &self.backend;
        let config = GatewayConfig {
            max_retries: b.max_retries,
            base_delay: Duration::from_millis(b.base_delay_ms),
            max_concurrency: b.max_concurrency.max(1),
            max_output_tokens: b.max_output_tokens,
            temperature: b.temperature,
            seed: Some(self.seed),
            embed_batch: b.embed_batch.max(1),
        };
        Ok(match b.kind {
            BackendKind::Mock => Gateway::new(
                Arc::new(MockBackend::new(self.seed).with_mode(b.mock_mode)),
                config,
            ),
            BackendKind::Remote => {
                let remote = RemoteBackend::new(RemoteConfig {
                    endpoint: b.endpoint.clone(),
                    model: b.model.clone(),
                    embedding_model: b.embedding_model.clone(),
                    auth_env: b.auth_env.clone(),
                    timeout_secs: b.timeout_secs,
                    context_tokens: b.context_tokens,
                })
                .map_err(|e| CliError::Backend(e.to_string()))?;
                Gateway::new(Arc::new(remote), config)
            }
        })
    }
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.reviews,
            &mut self.release_notes,
            &mut self.prompts_dir,
            &mut self.ground_truth,
            &mut self.match_labels,
            &mut self.shots,
            &mut self.stopwords,
            &mut self.spell_dictionary,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
        join(&mut self.out_dir);
    }
}

/// `section.key=value`; the value is read as a TOML literal, falling back
/// to a plain string.
pub fn apply_override(table: &mut toml::Table, expr: &str) -> Result<(), CliError> {
    let bad = |why: &str| CliError::Override {
        expr: expr.to_string(),
        message: why.to_string(),
    };
    let (key, raw) = expr
        .split_once('=')
        .ok_or_else(|| bad("expected KEY=VALUE"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad("empty key segment"));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, sections) = parts.split_last().unwrap();
    let mut cursor = table;
    for s in sections {
        cursor = cursor
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| bad(&format!("{s} is not a section")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_type_values() {
        let mut t: toml::Table = "seed = 1\n[extraction]\nk = 14\n".parse().unwrap();
        apply_override(&mut t, "extraction.k=6").unwrap();
        apply_override(&mut t, "suggestion.feature=Radar Map").unwrap();
        apply_override(&mut t, "backend.kind=\"remote\"").unwrap();
        let cfg: PipelineConfig = t.try_into().unwrap();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.extraction.k, 6);
        assert_eq!(cfg.suggestion.feature.as_deref(), Some("Radar Map"));
        assert_eq!(cfg.backend.kind, BackendKind::Remote);
        assert!(apply_override(&mut toml::Table::new(), "nokey").is_err());
        assert!(apply_override(&mut toml::Table::new(), "a..b=1").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let t: toml::Table = "[extraction]\nkk = 3\n".parse().unwrap();
        assert!(t.try_into::<PipelineConfig>().is_err());
    }

    #[test]
    fn defaults_follow_the_library() {
        let cfg = PipelineConfig::default();
        let e = cfg.extraction_config();
        assert_eq!((e.k, e.convergence_window, e.batch_size), (14, 5, 1000));
        assert_eq!(e.similarity_threshold, 0.75);
        assert_eq!(cfg.assign_options().chunk_size, 50);
        assert_eq!(cfg.suggestion.sample_size, 10);
    }
}
