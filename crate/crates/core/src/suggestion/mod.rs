//! Phase two: find the weakest features, pick the most detailed complaints
//! about them and turn competitors' praise into suggestions.

mod generate;
mod retrieval;
mod tfidf;
mod ufs;

pub use generate::{
    generate_suggestions, parse_suggestions, suggestion_id, SuggestionContext, SuggestionRecord,
};
pub use retrieval::{find_candidates, Candidate, CandidatePool};
pub use tfidf::{rank_complaints_tfidf, IdfTable, RankedComplaint};
pub use ufs::{compute_ufs, segregate, ufs_from_counts, FeatureScore, Segregated};

use crate::gateway::{GatewayError, TemplateError};

#[derive(Debug, thiserror::Error)]
pub enum SuggestionError {
    #[error("no negative reviews to rank")]
    NoNegatives,
    #[error("top_n must be at least 1")]
    ZeroTopN,
    #[error("review {0:?} is not in the TF-IDF scope")]
    OutsideScope(String),
    #[error("sample size must be at least 1")]
    ZeroSampleSize,
    #[error("no historical candidates for review {0:?}: every positive review postdates it")]
    NoHistoricalCandidates(String),
    #[error("candidate pool for review {0:?} is empty")]
    EmptyPool(String),
    #[error("suggestion count must be at least 1")]
    ZeroSuggestions,
    #[error("expected {expected} suggestions, got {got} after a re-ask; raw output: {raw:?}")]
    TooFew {
        expected: usize,
        got: usize,
        raw: String,
    },
    #[error("suggestions repeat after a re-ask; raw output: {raw:?}")]
    Duplicate { raw: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}
