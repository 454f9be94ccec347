//! Suggestions Implementation Rate: the share of suggestions that later
//! show up in the target app's release notes.
//!
//! Labels come from a human-edited match file; [`propose_matches`] only
//! lists likely pairs for the labeller.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::ReleaseNote;
use crate::gateway::{cosine_similarity, Gateway, GatewayError};
use crate::suggestion::SuggestionRecord;

#[derive(Debug, thiserror::Error)]
pub enum EvaluationError {
    #[error("no match labels")]
    EmptyLabels,
    #[error("label references unknown suggestion {0:?}")]
    UnknownSuggestion(String),
    #[error("suggestion {0:?} is marked matched without a release version")]
    MissingVersion(String),
    #[error("suggestion {id:?} cites release {version:?}, which is not in the release notes")]
    UnknownRelease { id: String, version: String },
    #[error("suggestion {id:?} cites release {version:?}, which is not after the complaint")]
    NotAfterComplaint { id: String, version: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchLabel {
    pub suggestion_id: String,
    pub matched: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note_excerpt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
}

impl MatchLabel {
    pub fn new(suggestion_id: impl Into<String>, matched: bool) -> Self {
        Self {
            suggestion_id: suggestion_id.into(),
            matched,
            release_version: None,
            note_excerpt: None,
            app_id: None,
            feature: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirRow {
    pub app_id: Option<String>,
    pub feature: String,
    pub matched_count: usize,
    pub total_count: usize,
    pub sir: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirReport {
    pub matched_count: usize,
    pub total_count: usize,
    pub sir: f64,
    /// One row per (app, feature) among labels that name a feature.
    pub rows: Vec<SirRow>,
}

/// Whole-number percentage, as in `89%`.
pub fn format_percent(ratio: f64) -> String {
    format!("{}%", (ratio * 100.0).round())
}

pub fn compute_sir(labels: &[MatchLabel]) -> Result<SirReport, EvaluationError> {
    if labels.is_empty() {
        return Err(EvaluationError::EmptyLabels);
    }
    let matched_count = labels.iter().filter(|l| l.matched).count();
    let mut groups: BTreeMap<(Option<&str>, &str), (usize, usize)> = BTreeMap::new();
    for l in labels {
        if let Some(f) = &l.feature {
            let g = groups.entry((l.app_id.as_deref(), f)).or_default();
            g.0 += l.matched as usize;
            g.1 += 1;
        }
    }
    Ok(SirReport {
        matched_count,
        total_count: labels.len(),
        sir: matched_count as f64 / labels.len() as f64,
        rows: groups
            .into_iter()
            .map(|((app, feature), (m, t))| SirRow {
                app_id: app.map(str::to_string),
                feature: feature.to_string(),
                matched_count: m,
                total_count: t,
                sir: m as f64 / t as f64,
            })
            .collect(),
    })
}

struct Target<'a> {
    app_id: &'a str,
    feature: &'a str,
    posted_at: NaiveDate,
}

fn targets(suggestions: &[SuggestionRecord]) -> HashMap<String, Target<'_>> {
    suggestions
        .iter()
        .flat_map(|rec| {
            rec.ids().map(move |(id, _)| {
                (
                    id,
                    Target {
                        app_id: &rec.app_id,
                        feature: &rec.feature_name,
                        posted_at: rec.target_posted_at,
                    },
                )
            })
        })
        .collect()
}

/// Checks every label against the suggestions and notes, filling in the
/// app and feature when the label omits them. A matched label must cite a
/// release of the same app dated strictly after the complaint.
pub fn validate_labels(
    labels: &[MatchLabel],
    suggestions: &[SuggestionRecord],
    notes: &[ReleaseNote],
) -> Result<Vec<MatchLabel>, EvaluationError> {
    let by_id = targets(suggestions);
    let releases: HashMap<(&str, &str), NaiveDate> = notes
        .iter()
        .map(|n| ((n.app_id.as_str(), n.version.as_str()), n.released_at))
        .collect();
    labels
        .iter()
        .map(|l| {
            let t = by_id
                .get(&l.suggestion_id)
                .ok_or_else(|| EvaluationError::UnknownSuggestion(l.suggestion_id.clone()))?;
            if l.matched {
                let version = l
                    .release_version
                    .as_deref()
                    .ok_or_else(|| EvaluationError::MissingVersion(l.suggestion_id.clone()))?;
                let released = releases.get(&(t.app_id, version)).ok_or_else(|| {
                    EvaluationError::UnknownRelease {
                        id: l.suggestion_id.clone(),
                        version: version.to_string(),
                    }
                })?;
                if *released <= t.posted_at {
                    return Err(EvaluationError::NotAfterComplaint {
                        id: l.suggestion_id.clone(),
                        version: version.to_string(),
                    });
                }
            }
            let mut l = l.clone();
            l.app_id.get_or_insert_with(|| t.app_id.to_string());
            l.feature.get_or_insert_with(|| t.feature.to_string());
            Ok(l)
        })
        .collect()
}

/// Splits on `.`, `;` and newlines, dropping empty pieces.
pub fn split_sentences(text: &str) -> Vec<String> {
    text.split(['.', ';', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// A suggestion and a release-note sentence that may describe it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchProposal {
    pub suggestion_id: String,
    pub app_id: String,
    pub feature: String,
    pub suggestion: String,
    pub release_version: String,
    pub released_at: NaiveDate,
    pub sentence: String,
    pub similarity: f64,
}

/// Every (suggestion, sentence) pair with cosine at least `threshold`,
/// where the sentence comes from a note of the same app released after the
/// complaint. Sorted by similarity desc, then suggestion id, version and
/// sentence.
pub fn propose_matches(
    suggestions: &[SuggestionRecord],
    notes: &[ReleaseNote],
    threshold: f64,
    gateway: &Gateway,
) -> Result<Vec<MatchProposal>, EvaluationError> {
    struct Pair<'a> {
        rec: &'a SuggestionRecord,
        id: String,
        text: &'a str,
        note: &'a ReleaseNote,
        sentence: String,
    }
    let mut pairs: Vec<Pair<'_>> = Vec::new();
    for rec in suggestions {
        let future: Vec<&ReleaseNote> = notes
            .iter()
            .filter(|n| n.app_id == rec.app_id && n.released_at > rec.target_posted_at)
            .collect();
        if future.is_empty() {
            log::warn!("no release notes after review {}", rec.target_review_id);
            continue;
        }
        for (id, text) in rec.ids() {
            for note in &future {
                for sentence in split_sentences(&note.text) {
                    pairs.push(Pair {
                        rec,
                        id: id.clone(),
                        text,
                        note,
                        sentence,
                    });
                }
            }
        }
    }
    if pairs.is_empty() {
        return Ok(Vec::new());
    }

    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &pairs {
        index.entry(p.text).or_default();
        index.entry(&p.sentence).or_default();
    }
    let texts: Vec<String> = index.keys().map(|t| t.to_string()).collect();
    for (i, slot) in index.values_mut().enumerate() {
        *slot = i;
    }
    let vectors = gateway.embed(&texts)?;

    let mut out: Vec<MatchProposal> = pairs
        .iter()
        .filter_map(|p| {
            let sim = cosine_similarity(
                &vectors[index[p.text]],
                &vectors[index[p.sentence.as_str()]],
            )
            .unwrap_or(0.0);
            (sim >= threshold).then(|| MatchProposal {
                suggestion_id: p.id.clone(),
                app_id: p.rec.app_id.clone(),
                feature: p.rec.feature_name.clone(),
                suggestion: p.text.to_string(),
                release_version: p.note.version.clone(),
                released_at: p.note.released_at,
                sentence: p.sentence.clone(),
                similarity: sim,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.suggestion_id.cmp(&b.suggestion_id))
            .then_with(|| a.release_version.cmp(&b.release_version))
            .then_with(|| a.sentence.cmp(&b.sentence))
    });
    Ok(out)
}
