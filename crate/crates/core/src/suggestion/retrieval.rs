use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::SuggestionError;
use crate::corpus::{Analyzer, Review};
use crate::gateway::{cosine_similarity, Gateway};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub review_id: String,
    pub app_id: String,
    pub posted_at: NaiveDate,
    pub similarity: f64,
    pub text: String,
}

/// Competitor praise for the feature, closest to the complaint first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub target_review_id: String,
    pub feature_name: String,
    pub candidates: Vec<Candidate>,
}

impl CandidatePool {
    pub fn ids(&self) -> Vec<String> {
        self.candidates
            .iter()
            .map(|c| c.review_id.clone())
            .collect()
    }
}

/// Keeps 4-5 star reviews of other apps posted no later than `target`,
/// then returns the `sample_size` most similar by embedding cosine (ties to
/// the smaller id). A blank text scores 0 against everything.
pub fn find_candidates(
    target: &Review,
    feature: &str,
    positives: &[&Review],
    sample_size: usize,
    analyzer: &Analyzer,
    gateway: &Gateway,
) -> Result<CandidatePool, SuggestionError> {
    if sample_size == 0 {
        return Err(SuggestionError::ZeroSampleSize);
    }
    let survivors: Vec<&Review> = positives
        .iter()
        .copied()
        .filter(|r| r.is_positive() && r.app_id != target.app_id && r.posted_at <= target.posted_at)
        .collect();
    if survivors.is_empty() {
        return Err(SuggestionError::NoHistoricalCandidates(target.id.clone()));
    }

    let mut texts = vec![analyzer.text(target)];
    texts.extend(survivors.iter().map(|r| analyzer.text(r)));
    let vectors = gateway.embed(&texts)?;
    let (query, rest) = vectors.split_first().expect("embed preserves count");

    let mut candidates: Vec<Candidate> = survivors
        .iter()
        .zip(rest)
        .zip(texts.into_iter().skip(1))
        .map(|((r, v), text)| Candidate {
            review_id: r.id.clone(),
            app_id: r.app_id.clone(),
            posted_at: r.posted_at,
            similarity: cosine_similarity(query, v).unwrap_or(0.0),
            text,
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.review_id.cmp(&b.review_id))
    });
    candidates.truncate(sample_size);
    Ok(CandidatePool {
        target_review_id: target.id.clone(),
        feature_name: feature.to_string(),
        candidates,
    })
}
