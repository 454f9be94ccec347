use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, ReviewSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    /// 1-based.
    pub index: usize,
    pub review_ids: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.review_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.review_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub batches: Vec<Batch>,
}

/// Shuffle the review ids with a seeded ChaCha8 generator and cut the
/// permutation into contiguous chunks of `batch_size`.
pub fn plan_batches(
    reviews: &ReviewSet,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<BatchPlan, CorpusError> {
    if batch_size == 0 {
        return Err(CorpusError::ZeroBatchSize);
    }
    let mut ids: Vec<String> = reviews.iter().map(|r| r.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    ids.shuffle(&mut rng);

    let batches = ids
        .chunks(batch_size)
        .enumerate()
        .map(|(i, chunk)| Batch {
            index: i + 1,
            review_ids: chunk.to_vec(),
        })
        .collect();
    Ok(BatchPlan {
        batch_size,
        shuffle_seed,
        batches,
    })
}
