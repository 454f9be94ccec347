use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::SuggestionError;
use crate::corpus::{Analyzer, Review};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedComplaint {
    pub review_id: String,
    pub tfidf_score: f64,
    pub rank: usize,
}

/// `idf(t) = ln(N / df(t))` over a document scope.
#[derive(Debug, Clone, Default)]
pub struct IdfTable {
    documents: usize,
    df: HashMap<String, usize>,
}

impl IdfTable {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut table = Self::default();
        for doc in docs {
            table.documents += 1;
            for term in doc.iter().collect::<HashSet<_>>() {
                *table.df.entry(term.clone()).or_insert(0) += 1;
            }
        }
        table
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    /// Zero for terms absent from the scope.
    pub fn idf(&self, term: &str) -> f64 {
        match self.df.get(term) {
            Some(&df) => (self.documents as f64 / df as f64).ln(),
            None => 0.0,
        }
    }

    /// `Σ_t tf(t, d) · idf(t)` over the distinct terms of `doc`.
    pub fn score(&self, doc: &[String]) -> f64 {
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for t in doc {
            *tf.entry(t).or_insert(0) += 1;
        }
        tf.into_iter().map(|(t, n)| n as f64 * self.idf(t)).sum()
    }
}

/// Ranks negative reviews by summed TF-IDF with idf taken over `scope`.
/// With `length_normalized` each score is divided by the review's token
/// count. Ties go to the smaller review id.
pub fn rank_complaints_tfidf(
    negatives: &[&Review],
    scope: &[&Review],
    top_n: usize,
    analyzer: &Analyzer,
    length_normalized: bool,
) -> Result<Vec<RankedComplaint>, SuggestionError> {
    if negatives.is_empty() {
        return Err(SuggestionError::NoNegatives);
    }
    if top_n == 0 {
        return Err(SuggestionError::ZeroTopN);
    }
    let tokens: HashMap<&str, Vec<String>> = scope
        .iter()
        .map(|r| (r.id.as_str(), analyzer.tokens(r).into_inner()))
        .collect();
    if let Some(r) = negatives
        .iter()
        .find(|r| !tokens.contains_key(r.id.as_str()))
    {
        return Err(SuggestionError::OutsideScope(r.id.clone()));
    }
    let table = IdfTable::build(scope.iter().map(|r| tokens[r.id.as_str()].as_slice()));

    let mut seen = HashSet::new();
    let mut scored: Vec<(f64, &str)> = negatives
        .iter()
        .filter(|r| seen.insert(r.id.as_str()))
        .map(|r| {
            let doc = &tokens[r.id.as_str()];
            let mut s = table.score(doc);
            if length_normalized {
                s = if doc.is_empty() {
                    0.0
                } else {
                    s / doc.len() as f64
                };
            }
            (s, r.id.as_str())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    if top_n > scored.len() {
        log::warn!(
            "asked for {top_n} complaints but only {} negative reviews exist",
            scored.len()
        );
    }
    Ok(scored
        .into_iter()
        .take(top_n)
        .enumerate()
        .map(|(i, (s, id))| RankedComplaint {
            review_id: id.to_string(),
            tfidf_score: s,
            rank: i + 1,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{review, Preprocessor, StopWords};

    fn plain() -> Analyzer {
        Analyzer::new(Preprocessor::new(StopWords::none()), false)
    }

    #[test]
    fn universal_terms_score_zero() {
        let docs = [
            review("a", "x", 1, "2020-01-01", "app crash"),
            review("b", "x", 1, "2020-01-01", "app radar"),
        ];
        let refs: Vec<&Review> = docs.iter().collect();
        let out = rank_complaints_tfidf(&refs[..1], &refs, 5, &plain(), false).unwrap();
        // only "crash" counts: ln(2 / 1)
        assert!((out[0].tfidf_score - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_id_and_top_n_caps() {
        let docs = [
            review("b", "x", 1, "2020-01-01", "radar frozen"),
            review("a", "x", 1, "2020-01-01", "radar frozen"),
            review("c", "x", 1, "2020-01-01", "radar"),
        ];
        let refs: Vec<&Review> = docs.iter().collect();
        let out = rank_complaints_tfidf(&refs, &refs, 10, &plain(), false).unwrap();
        let ids: Vec<_> = out.iter().map(|c| (c.review_id.as_str(), c.rank)).collect();
        assert_eq!(ids, [("a", 1), ("b", 2), ("c", 3)]);
        assert_eq!(out[0].tfidf_score, out[1].tfidf_score);
        assert_eq!(
            rank_complaints_tfidf(&refs, &refs, 1, &plain(), false)
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn errors() {
        let docs = [review("a", "x", 1, "2020-01-01", "radar")];
        let refs: Vec<&Review> = docs.iter().collect();
        assert!(matches!(
            rank_complaints_tfidf(&[], &refs, 1, &plain(), false),
            Err(SuggestionError::NoNegatives)
        ));
        assert!(matches!(
            rank_complaints_tfidf(&refs, &refs, 0, &plain(), false),
            Err(SuggestionError::ZeroTopN)
        ));
        assert!(matches!(
            rank_complaints_tfidf(&refs, &[], 1, &plain(), false),
            Err(SuggestionError::OutsideScope(_))
        ));
    }

    #[test]
    fn length_normalization_divides_by_token_count() {
        let docs = [
            review("a", "x", 1, "2020-01-01", "crash crash radar"),
            review("b", "x", 1, "2020-01-01", "widget"),
        ];
        let refs: Vec<&Review> = docs.iter().collect();
        let raw = rank_complaints_tfidf(&refs, &refs, 2, &plain(), false).unwrap();
        let norm = rank_complaints_tfidf(&refs, &refs, 2, &plain(), true).unwrap();
        assert_eq!(raw[0].review_id, "a");
        assert!((raw[0].tfidf_score - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert!((norm[0].tfidf_score - 2f64.ln()).abs() < 1e-12);
        assert_eq!(norm[0].review_id, "a");
    }
}
