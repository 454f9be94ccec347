//! Incremental batch-and-match feature extraction.
//!
//! Each batch of shuffled reviews yields up to `k` features from the model.
//! Every incoming feature is compared, by cosine similarity of the
//! embeddings of `"name: description"`, against the running merged set; a
//! match at or above the threshold folds it into the existing feature,
//! otherwise it is appended. Extraction stops once the ranked top-`k` names
//! have not changed over the last `convergence_window` batches, or when the
//! corpus runs out.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{plan_batches, Analyzer, Batch, CorpusError, ReviewSet};
use crate::gateway::{
    cosine_similarity, id_lines, render_prompt, Bindings, EmbeddingVector, Gateway, GatewayError,
    PromptSet, TemplateError, VectorError, REASK_MARKER,
};

#[derive(Debug, thiserror::Error)]
pub enum ExtractionError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("batch {batch}: {source}")]
    Gateway {
        batch: usize,
        #[source]
        source: GatewayError,
    },
    #[error("batch {batch}: no `Name: Description` lines in the completion after a re-ask; raw output: {raw:?}")]
    Unparseable { batch: usize, raw: String },
    #[error("batch {0} is empty")]
    EmptyBatch(usize),
    #[error("batch plan references unknown review {0:?}")]
    UnknownReview(String),
    #[error("comparing feature {name:?}: {source}")]
    Similarity {
        name: String,
        #[source]
        source: VectorError,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub k: usize,
    pub similarity_threshold: f64,
    pub convergence_window: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    /// Compare top-k names as sets instead of ordered lists.
    pub converge_unordered: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            k: 14,
            similarity_threshold: 0.75,
            convergence_window: 5,
            batch_size: 1000,
            shuffle_seed: 0,
            converge_unordered: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLabel {
    pub name: String,
    pub description: String,
    pub embedding: EmbeddingVector,
    pub first_seen_batch: usize,
    /// Number of batch-level features folded into this one.
    pub support_count: usize,
    pub alias_names: BTreeSet<String>,
}

impl FeatureLabel {
    /// The text that gets embedded for a feature.
    pub fn embedding_text(name: &str, description: &str) -> String {
        format!("{name}: {description}")
    }

    pub fn record(&self) -> FeatureRecord {
        FeatureRecord {
            name: self.name.clone(),
            description: self.description.clone(),
            support_count: self.support_count,
            alias_names: self.alias_names.iter().cloned().collect(),
            first_seen_batch: self.first_seen_batch,
        }
    }
}

/// On-disk form of a feature (checkpoints and catalogs).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub name: String,
    pub description: String,
    pub support_count: usize,
    #[serde(default)]
    pub alias_names: Vec<String>,
    pub first_seen_batch: usize,
}

/// Re-embeds stored records.
pub fn restore_features(
    records: &[FeatureRecord],
    gateway: &Gateway,
) -> Result<Vec<FeatureLabel>, GatewayError> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = records
        .iter()
        .map(|r| FeatureLabel::embedding_text(&r.name, &r.description))
        .collect();
    let vectors = gateway.embed(&texts)?;
    Ok(records
        .iter()
        .zip(vectors)
        .map(|(r, embedding)| FeatureLabel {
            name: r.name.clone(),
            description: r.description.clone(),
            embedding,
            first_seen_batch: r.first_seen_batch,
            support_count: r.support_count,
            alias_names: r.alias_names.iter().cloned().collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchFeatureSet {
    pub batch_index: usize,
    pub features: Vec<FeatureLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedFeatureSet {
    pub up_to_batch: usize,
    /// In insertion order.
    pub features: Vec<FeatureLabel>,
    pub top_k_names: Vec<String>,
}

impl MergedFeatureSet {
    pub fn new(up_to_batch: usize, features: Vec<FeatureLabel>, k: usize) -> Self {
        let top_k_names = rank_top_k(&features, k);
        Self {
            up_to_batch,
            features,
            top_k_names,
        }
    }

    /// The first merged set is the first batch's features, unchanged.
    pub fn first(batch: BatchFeatureSet, k: usize) -> Self {
        Self::new(batch.batch_index, batch.features, k)
    }

    pub fn get(&self, name: &str) -> Option<&FeatureLabel> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Features named in `top_k_names`, in rank order.
    pub fn top_k(&self) -> Vec<&FeatureLabel> {
        self.top_k_names
            .iter()
            .filter_map(|n| self.get(n))
            .collect()
    }

    pub fn total_support(&self) -> usize {
        self.features.iter().map(|f| f.support_count).sum()
    }
}

/// Names ordered by support count descending, then name ascending.
pub fn rank_top_k(features: &[FeatureLabel], k: usize) -> Vec<String> {
    let mut ranked: Vec<&FeatureLabel> = features.iter().collect();
    ranked.sort_by(|a, b| {
        b.support_count
            .cmp(&a.support_count)
            .then_with(|| a.name.cmp(&b.name))
    });
    ranked.into_iter().take(k).map(|f| f.name.clone()).collect()
}

/// Pulls `Name: Description` pairs out of a completion. List markers and
/// bold markers are stripped; lines with an empty side are skipped, as are
/// repeated names.
pub fn parse_feature_lines(text: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let line = strip_list_marker(line.trim());
        let Some((name, desc)) = line.split_once(':') else {
            continue;
        };
        let name = name
            .trim()
            .trim_matches(|c| c == '*' || c == '"' || c == '`')
            .trim();
        let desc = desc.trim().trim_matches(|c| c == '*' || c == '"').trim();
        if name.is_empty() || desc.is_empty() || name.split_whitespace().count() > 8 {
            continue;
        }
        if out.iter().any(|(n, _)| n.eq_ignore_ascii_case(name)) {
            continue;
        }
        out.push((name.to_string(), desc.to_string()));
    }
    out
}

pub(crate) fn strip_list_marker(line: &str) -> &str {
    let line = line.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return rest.trim_start();
        }
    }
    line
}

/// Everything one extraction run needs besides the corpus.
#[derive(Debug, Clone, Copy)]
pub struct ExtractionContext<'a> {
    pub config: &'a ExtractionConfig,
    pub prompts: &'a PromptSet,
    pub analyzer: &'a Analyzer,
    pub gateway: &'a Gateway,
}

/// Prompts the model for one batch's top-k features and embeds them.
pub fn extract_batch_features(
    batch: &Batch,
    reviews: &ReviewSet,
    category: &str,
    ctx: ExtractionContext<'_>,
) -> Result<BatchFeatureSet, ExtractionError> {
    if batch.is_empty() {
        return Err(ExtractionError::EmptyBatch(batch.index));
    }
    let mut items = Vec::with_capacity(batch.len());
    for id in &batch.review_ids {
        let review = reviews
            .get(id)
            .ok_or_else(|| ExtractionError::UnknownReview(id.clone()))?;
        items.push((id.as_str(), ctx.analyzer.text(review)));
    }
    let k = ctx.config.k;
    let bindings: Bindings = [
        ("category", category.to_string()),
        ("k", k.to_string()),
        ("definition", ctx.prompts.feature_definition.clone()),
        ("one_shot", ctx.prompts.extraction_one_shot.clone()),
        (
            "reviews",
            id_lines(items.iter().map(|(id, t)| (*id, t.as_str()))),
        ),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b))
    .collect();
    let prompt = render_prompt(&ctx.prompts.extraction, &bindings)?;
    let gw_err = |source| ExtractionError::Gateway {
        batch: batch.index,
        source,
    };

    let raw = ctx
        .gateway
        .generate(&ctx.gateway.request(prompt.clone()))
        .map_err(gw_err)?;
    let mut parsed = parse_feature_lines(&raw);
    if parsed.is_empty() {
        log::warn!(
            "batch {}: completion had no feature lines; asking again",
            batch.index
        );
        let reask = format!(
            "{prompt}\n\n{REASK_MARKER}: reply only with lines of the form `Name: Description`, one feature per line, at most {k} lines."
        );
        let raw = ctx
            .gateway
            .generate(&ctx.gateway.request(reask))
            .map_err(gw_err)?;
        parsed = parse_feature_lines(&raw);
        if parsed.is_empty() {
            return Err(ExtractionError::Unparseable {
                batch: batch.index,
                raw,
            });
        }
    }
    if parsed.len() > k {
        log::warn!(
            "batch {}: model returned {} features, keeping the first {k}",
            batch.index,
            parsed.len()
        );
        parsed.truncate(k);
    }

    let texts: Vec<String> = parsed
        .iter()
        .map(|(n, d)| FeatureLabel::embedding_text(n, d))
        .collect();
    let vectors = ctx.gateway.embed(&texts).map_err(gw_err)?;
    let features = parsed
        .into_iter()
        .zip(vectors)
        .map(|((name, description), embedding)| FeatureLabel {
            name,
            description,
            embedding,
            first_seen_batch: batch.index,
            support_count: 1,
            alias_names: BTreeSet::new(),
        })
        .collect();
    Ok(BatchFeatureSet {
        batch_index: batch.index,
        features,
    })
}

/// Folds a batch's features into the merged set.
///
/// Each incoming feature is compared against everything merged so far,
/// including features appended earlier from the same batch. The existing
/// feature keeps its name and embedding.
pub fn merge_feature_sets(
    merged: &MergedFeatureSet,
    incoming: &BatchFeatureSet,
    threshold: f64,
    k: usize,
) -> Result<MergedFeatureSet, ExtractionError> {
    let mut features = merged.features.clone();
    for inc in &incoming.features {
        let mut best: Option<(usize, f64)> = None;
        for (i, existing) in features.iter().enumerate() {
            let sim = cosine_similarity(&existing.embedding, &inc.embedding).map_err(|source| {
                ExtractionError::Similarity {
                    name: inc.name.clone(),
                    source,
                }
            })?;
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((i, sim));
            }
        }
        match best {
            Some((i, sim)) if sim >= threshold => {
                let target = &mut features[i];
                target.support_count += inc.support_count;
                if !inc.name.eq_ignore_ascii_case(&target.name) {
                    target.alias_names.insert(inc.name.clone());
                }
                target.alias_names.extend(inc.alias_names.iter().cloned());
            }
            _ => features.push(inc.clone()),
        }
    }
    Ok(MergedFeatureSet::new(incoming.batch_index, features, k))
}

/// True once the top-k names are identical across the last `window + 1`
/// merged sets, i.e. unchanged over the last `window` transitions.
pub fn check_convergence(history: &[MergedFeatureSet], window: usize, unordered: bool) -> bool {
    if window == 0 || history.len() < window + 1 {
        return false;
    }
    let tail = &history[history.len() - window - 1..];
    let reference = &tail[0].top_k_names;
    if unordered {
        let set: BTreeSet<&String> = reference.iter().collect();
        tail.iter()
            .all(|m| m.top_k_names.iter().collect::<BTreeSet<_>>() == set)
    } else {
        tail.iter().all(|m| &m.top_k_names == reference)
    }
}

/// `batches × batch_size / total`, capped at 1.
pub fn reviews_fraction(batches: usize, batch_size: usize, total_reviews: usize) -> f64 {
    if total_reviews == 0 {
        return 0.0;
    }
    ((batches * batch_size) as f64 / total_reviews as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionReport {
    /// Final top-k, in rank order.
    pub catalog: Vec<FeatureLabel>,
    pub batches_processed: usize,
    pub reviews_fraction: f64,
    pub converged: bool,
    pub total_reviews: usize,
    pub batch_size: usize,
    /// Size of the full merged set behind the catalog.
    pub distinct_features: usize,
}

impl ExtractionReport {
    /// Share of the corpus consumed, as a whole percentage.
    pub fn percent_of_reviews(&self) -> u32 {
        (self.reviews_fraction * 100.0).round() as u32
    }

    pub fn catalog_names(&self) -> Vec<&str> {
        self.catalog.iter().map(|f| f.name.as_str()).collect()
    }
}

/// Options for resumable runs.
#[derive(Debug, Clone, Default)]
pub struct RunControl {
    /// Merged sets from an earlier, interrupted run, oldest first.
    pub resume_from: Vec<MergedFeatureSet>,
    /// Stop after this batch index even if not converged.
    pub stop_after_batch: Option<usize>,
}

pub fn run_extraction(
    reviews: &ReviewSet,
    category: &str,
    ctx: ExtractionContext<'_>,
) -> Result<ExtractionReport, ExtractionError> {
    run_extraction_with(reviews, category, ctx, RunControl::default(), |_| Ok(()))
}

/// Like [`run_extraction`], calling `on_batch` with every new merged set
/// (for checkpointing) and optionally continuing from earlier history.
pub fn run_extraction_with(
    reviews: &ReviewSet,
    category: &str,
    ctx: ExtractionContext<'_>,
    control: RunControl,
    mut on_batch: impl FnMut(&MergedFeatureSet) -> Result<(), ExtractionError>,
) -> Result<ExtractionReport, ExtractionError> {
    let cfg = ctx.config;
    let plan = plan_batches(reviews, cfg.batch_size, cfg.shuffle_seed)?;
    let mut history = control.resume_from;
    for (i, m) in history.iter().enumerate() {
        if m.up_to_batch != i + 1 {
            return Err(ExtractionError::Checkpoint(format!(
                "history entry {} is for batch {}",
                i + 1,
                m.up_to_batch
            )));
        }
    }
    if history.len() > plan.batches.len() {
        return Err(ExtractionError::Checkpoint(format!(
            "{} checkpoints but only {} batches in the plan",
            history.len(),
            plan.batches.len()
        )));
    }

    let mut converged = check_convergence(&history, cfg.convergence_window, cfg.converge_unordered);
    if !converged {
        for batch in &plan.batches[history.len()..] {
            let incoming = extract_batch_features(batch, reviews, category, ctx)?;
            let next = match history.last() {
                None => MergedFeatureSet::first(incoming, cfg.k),
                Some(last) => merge_feature_sets(last, &incoming, cfg.similarity_threshold, cfg.k)?,
            };
            log::info!(
                "batch {}: {} merged features, top-{}: {:?}",
                batch.index,
                next.features.len(),
                cfg.k,
                next.top_k_names
            );
            on_batch(&next)?;
            history.push(next);
            converged = check_convergence(&history, cfg.convergence_window, cfg.converge_unordered);
            if converged || control.stop_after_batch == Some(batch.index) {
                break;
            }
        }
    }

    let last = history
        .last()
        .ok_or_else(|| ExtractionError::Checkpoint("no batches processed".into()))?;
    Ok(ExtractionReport {
        catalog: last.top_k().into_iter().cloned().collect(),
        batches_processed: history.len(),
        reviews_fraction: reviews_fraction(history.len(), cfg.batch_size, reviews.len()),
        converged,
        total_reviews: reviews.len(),
        batch_size: cfg.batch_size,
        distinct_features: last.features.len(),
    })
}
