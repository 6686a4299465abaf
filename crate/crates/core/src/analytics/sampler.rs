//! Seeded uniform sampling of conversations for manual annotation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ids::ConversationId;
use crate::service::Conversation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOutcome {
    /// Sampled ids in canonical (sorted) order.
    pub ids: Vec<ConversationId>,
    pub eligible: usize,
    /// How many short of the requested size the sample is; zero when the
    /// eligible set was large enough.
    pub shortfall: usize,
}

/// Draws `n` distinct conversations uniformly without replacement from those
/// matching `eligible`. Input order does not matter: eligible ids are sorted
/// before shuffling, so a seed always selects the same ids.
pub fn sample_for_annotation<'a>(
    conversations: impl IntoIterator<Item = &'a Conversation>,
    n: usize,
    seed: u64,
    eligible: impl Fn(&Conversation) -> bool,
) -> SampleOutcome {
    let mut pool: Vec<ConversationId> =
        conversations.into_iter().filter(|c| eligible(c)).map(|c| c.id.clone()).collect();
    pool.sort();
    pool.dedup();
    let available = pool.len();
    let take = n.min(available);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (chosen, _) = pool.partial_shuffle(&mut rng, take);
    let mut ids = chosen.to_vec();
    ids.sort();
    SampleOutcome { ids, eligible: available, shortfall: n - take }
}
