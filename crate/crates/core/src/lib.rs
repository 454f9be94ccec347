//! Feature mining over app-store reviews and competitor-grounded improvement
//! suggestions.
//!
//! The pipeline has two phases. Phase one extracts a catalog of features from
//! a category's reviews in batches, merging near-duplicates by embedding
//! similarity until the top features stop changing, then assigns one feature
//! to every review. Phase two scores features by their share of negative
//! reviews, ranks the target app's complaints by TF-IDF, retrieves similar
//! positive reviews of competitors and asks the model for suggestions.

pub mod assignment;
pub mod corpus;
pub mod evaluation;
pub mod extraction;
pub mod gateway;
pub mod suggestion;
