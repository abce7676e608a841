//! Named, seedable random streams.
//!
//! Every random decision in the platform draws from a stream derived from
//! `(experiment seed, purpose label, key)`. Streams for different
//! participants are independent of arrival order, so concurrent requests
//! cannot reorder randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The concrete generator behind every derived stream.
pub type StreamRng = ChaCha8Rng;

/// Purpose labels for derived streams.
pub mod label {
    pub const ASSIGN: &str = "assign";
    pub const INVENTORY: &str = "inventory";
    pub const RANK: &str = "rank";
    pub const ENGAGEMENT: &str = "engagement";
    pub const INTERVENTION: &str = "intervention";
    pub const SLUG: &str = "slug";
    pub const EXPERIMENT_ID: &str = "experiment_id";
}

/// Derives an independent stream from a root seed, a purpose label and a key.
pub fn derive_stream(seed: u64, label: &str, key: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update((key.len() as u64).to_le_bytes());
    hasher.update(key.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    StreamRng::from_seed(digest)
}
