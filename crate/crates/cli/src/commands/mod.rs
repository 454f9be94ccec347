pub mod assign;
pub mod evaluate;
pub mod extract;
pub mod rank;
pub mod suggest;

use std::path::PathBuf;

use reviewlens_core::assignment::{FeatureCatalog, ResolvedVia};
use reviewlens_core::corpus::{ingest_reviews, Analyzer, ReviewSet};
use reviewlens_core::extraction::{restore_features, FeatureRecord};
use reviewlens_core::gateway::{Gateway, PromptSet};

use crate::artifact::{read_jsonl, Header, InputHash, FORMAT_VERSION};
use crate::config::{BackendKind, PipelineConfig};
use crate::CliError;

pub const CATALOG: &str = "catalog.jsonl";
pub const EXTRACTION_REPORT: &str = "extraction_report.json";
pub const CHECKPOINTS: &str = "checkpoints";
pub const ASSIGNMENTS: &str = "assignments.jsonl";
pub const QUARANTINE: &str = "quarantine.jsonl";
pub const SHOTS: &str = "shots.jsonl";
pub const ASSIGNMENT_METRICS: &str = "assignment_metrics.json";
pub const UFS: &str = "ufs.jsonl";
pub const COMPLAINTS: &str = "complaints.jsonl";
pub const CANDIDATES: &str = "candidates.jsonl";
pub const SUGGESTIONS: &str = "suggestions.jsonl";
pub const MATCH_PROPOSALS: &str = "match_proposals.jsonl";
pub const SIR: &str = "sir.json";

/// Everything a stage needs, built once from the config.
pub struct Env {
    pub cfg: PipelineConfig,
    pub gateway: Gateway,
    pub analyzer: Analyzer,
    pub prompts: PromptSet,
}

#[derive(serde::Serialize)]
struct BackendIdentity<'a> {
    kind: BackendKind,
    mock_mode: Option<reviewlens_core::gateway::MockMode>,
    model: Option<&'a str>,
    embedding_model: Option<&'a str>,
}

impl Env {
    pub fn new(cfg: PipelineConfig) -> Result<Self, CliError> {
        Ok(Self {
            gateway: cfg.gateway()?,
            analyzer: cfg.analyzer()?,
            prompts: cfg.prompts()?,
            cfg,
        })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.paths.out_dir.join(name)
    }

    /// Path of an upstream artifact, or an error naming the command that
    /// produces it.
    pub fn require(&self, name: &str, command: &'static str) -> Result<PathBuf, CliError> {
        let path = self.out(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::MissingPrerequisite { path, command })
        }
    }

    pub fn reviews(&self) -> Result<ReviewSet, CliError> {
        let path = self.cfg.reviews_path()?;
        if !path.exists() {
            return Err(CliError::MissingPath(path.to_path_buf()));
        }
        Ok(ingest_reviews(path, self.cfg.reviews_format()?)?)
    }

    pub fn header(&self, artifact: &str, inputs_sha256: &str) -> Header {
        Header {
            artifact: artifact.to_string(),
            format_version: FORMAT_VERSION,
            inputs_sha256: inputs_sha256.to_string(),
            backend: self.gateway.backend_name().to_string(),
            seed: self.cfg.seed,
        }
    }

    /// Hash seeded with what every stage depends on: seed, backend and text
    /// processing settings. The auth token is never part of it.
    pub fn base_hash(&self) -> Result<InputHash, CliError> {
        let b = &self.cfg.backend;
        let remote = b.kind == BackendKind::Remote;
        let mut h = InputHash::new()
            .value("seed", &self.cfg.seed)
            .value(
                "backend",
                &BackendIdentity {
                    kind: b.kind,
                    mock_mode: (!remote).then_some(b.mock_mode),
                    model: remote.then_some(b.model.as_str()),
                    embedding_model: remote.then_some(b.embedding_model.as_str()),
                },
            )
            .value("corpus", &self.cfg.corpus);
        if let Some(p) = &self.cfg.paths.stopwords {
            h = h.file("stopwords", p)?;
        }
        if let Some(p) = &self.cfg.paths.spell_dictionary {
            h = h.file("spell_dictionary", p)?;
        }
        Ok(h)
    }

    pub fn catalog_records(&self) -> Result<(PathBuf, Vec<FeatureRecord>), CliError> {
        let path = self.require(CATALOG, "extract")?;
        let (_, records) = read_jsonl(&path)?;
        Ok((path, records))
    }

    pub fn catalog(&self) -> Result<(PathBuf, FeatureCatalog), CliError> {
        let (path, records) = self.catalog_records()?;
        let features = restore_features(&records, &self.gateway)?;
        Ok((path, FeatureCatalog::new(features)?))
    }
}

pub fn resolved_via_name(v: ResolvedVia) -> &'static str {
    match v {
        ResolvedVia::Exact => "exact",
        ResolvedVia::Alias => "alias",
        ResolvedVia::NearestEmbedding => "nearest_embedding",
    }
}

/// Plain-text table; numeric columns are right-aligned.
pub fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let numeric: Vec<bool> = (0..headers.len())
        .map(|i| {
            !rows.is_empty()
                && rows.iter().all(|r| {
                    r.get(i)
                        .and_then(|c| c.chars().next())
                        .is_some_and(|c| c.is_ascii_digit())
                })
        })
        .collect();
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if numeric[i] {
                    format!("{c:>w$}")
                } else {
                    format!("{c:<w$}")
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    out += &line(
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    );
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_aligns() {
        let t = table(
            &["App", "N"],
            &[
                vec!["sky".into(), "10".into()],
                vec!["a".into(), "2".into()],
            ],
        );
        assert_eq!(t, "App   N\n---  --\nsky  10\na     2\n");
    }
}
