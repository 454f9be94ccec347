//! Review corpora, release notes, text normalization and batch planning.

mod batch;
mod ingest;
mod text;

use std::collections::HashMap;
use std::path::PathBuf;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use batch::{plan_batches, Batch, BatchPlan};
pub use ingest::{
    ingest_release_notes, ingest_reviews, read_release_notes, read_reviews, ReviewFormat,
};
pub use text::{preprocess, tokenize, Analyzer, Preprocessor, SpellChecker, StopWords, TokenList};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("invalid rating at line {line}: {rating} is outside 1..5")]
    InvalidRating { line: usize, rating: i64 },
    #[error("invalid date at line {line}: {value:?} is not an ISO-8601 date")]
    InvalidDate { line: usize, value: String },
    #[error("empty review body at line {line}")]
    EmptyBody { line: usize },
    #[error("duplicate review id {id:?} at line {line}")]
    DuplicateId { line: usize, id: String },
    #[error("category mismatch at line {line}: expected {expected:?}, found {found:?}")]
    CategoryMismatch {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty release note text at line {line}")]
    EmptyNote { line: usize },
    #[error("duplicate release {app_id} {version} at line {line}")]
    DuplicateRelease {
        line: usize,
        app_id: String,
        version: String,
    },
    #[error("unknown review format {0:?} (expected jsonl or csv)")]
    UnknownFormat(String),
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
}

/// One user review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub id: String,
    pub app_id: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub body: String,
    pub rating: u8,
    pub posted_at: NaiveDate,
}

impl Review {
    /// Text used for analysis. With `concat_title` set and a non-blank title,
    /// this is `"title. body"`.
    pub fn text(&self, concat_title: bool) -> String {
        match self.title.as_deref().map(str::trim) {
            Some(title) if concat_title && !title.is_empty() => {
                format!("{}. {}", title.trim_end_matches('.'), self.body.trim())
            }
            _ => self.body.trim().to_string(),
        }
    }

    /// Rated 1 or 2 stars.
    pub fn is_negative(&self) -> bool {
        matches!(self.rating, 1 | 2)
    }

    /// Rated 4 or 5 stars.
    pub fn is_positive(&self) -> bool {
        matches!(self.rating, 4 | 5)
    }
}

/// All reviews of one category, in file order, with unique ids.
#[derive(Debug, Clone)]
pub struct ReviewSet {
    category: String,
    reviews: Vec<Review>,
    index: HashMap<String, usize>,
}

impl ReviewSet {
    pub fn new(reviews: Vec<Review>) -> Result<Self, CorpusError> {
        let category = match reviews.first() {
            Some(r) => r.category.clone(),
            None => return Err(CorpusError::EmptyCorpus),
        };
        let mut index = HashMap::with_capacity(reviews.len());
        for (i, review) in reviews.iter().enumerate() {
            let line = i + 1;
            if !(1..=5).contains(&review.rating) {
                return Err(CorpusError::InvalidRating {
                    line,
                    rating: review.rating as i64,
                });
            }
            if review.body.trim().is_empty() {
                return Err(CorpusError::EmptyBody { line });
            }
            if review.category != category {
                return Err(CorpusError::CategoryMismatch {
                    line,
                    expected: category,
                    found: review.category.clone(),
                });
            }
            if index.insert(review.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    line,
                    id: review.id.clone(),
                });
            }
        }
        Ok(Self {
            category,
            reviews,
            index,
        })
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn reviews(&self) -> &[Review] {
        &self.reviews
    }

    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Review> {
        self.index.get(id).map(|&i| &self.reviews[i])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Review> {
        self.reviews.iter()
    }

    /// Reviews belonging to one app, in corpus order.
    pub fn for_app<'a>(&'a self, app_id: &'a str) -> impl Iterator<Item = &'a Review> + 'a {
        self.reviews.iter().filter(move |r| r.app_id == app_id)
    }

    /// Distinct app ids in order of first appearance.
    pub fn app_ids(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for r in &self.reviews {
            if !seen.contains(&r.app_id.as_str()) {
                seen.push(r.app_id.as_str());
            }
        }
        seen
    }
}

impl<'a> IntoIterator for &'a ReviewSet {
    type Item = &'a Review;
    type IntoIter = std::slice::Iter<'a, Review>;

    fn into_iter(self) -> Self::IntoIter {
        self.reviews.iter()
    }
}

/// Per-version change description of an app.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseNote {
    pub app_id: String,
    pub version: String,
    pub released_at: NaiveDate,
    pub text: String,
}

#[cfg(test)]
pub(crate) fn review(id: &str, app: &str, rating: u8, date: &str, body: &str) -> Review {
    Review {
        id: id.to_string(),
        app_id: app.to_string(),
        category: "Weather".to_string(),
        title: None,
        body: body.to_string(),
        rating,
        posted_at: date.parse().unwrap(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn title_is_joined_with_body() {
        let mut r = review("a", "x", 5, "2020-01-01", "Works fine");
        assert_eq!(r.text(true), "Works fine");
        r.title = Some("Great app.".into());
        assert_eq!(r.text(true), "Great app. Works fine");
        assert_eq!(r.text(false), "Works fine");
        r.title = Some("   ".into());
        assert_eq!(r.text(true), "Works fine");
    }

    #[test]
    fn review_set_rejects_mixed_categories_and_duplicates() {
        let a = review("a", "x", 5, "2020-01-01", "ok");
        let mut b = review("b", "x", 5, "2020-01-01", "ok");
        b.category = "SMS".into();
        assert!(matches!(
            ReviewSet::new(vec![a.clone(), b]),
            Err(CorpusError::CategoryMismatch { line: 2, .. })
        ));
        assert!(matches!(
            ReviewSet::new(vec![a.clone(), a]),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
        assert!(matches!(
            ReviewSet::new(vec![]),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    #[test]
    fn sentiment_buckets() {
        let ratings: Vec<_> = (1..=5)
            .map(|s| {
                let r = review("a", "x", s, "2020-01-01", "ok");
                (r.is_negative(), r.is_positive())
            })
            .collect();
        assert_eq!(
            ratings,
            vec![
                (true, false),
                (true, false),
                (false, false),
                (false, true),
                (false, true)
            ]
        );
    }
}
