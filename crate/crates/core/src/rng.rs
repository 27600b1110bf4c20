//! Named random streams.
//!
//! Every consumer of randomness (ingest subsampling, fold assignment,
//! similarity initialization, mini-batch sampling, noise) draws from its own
//! stream derived from one root seed, so any component can be replayed on its
//! own without disturbing the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub const INGEST: &str = "ingest";
pub const FOLD: &str = "fold";
pub const INIT: &str = "init";
pub const BATCH: &str = "batch";
pub const NOISE: &str = "noise";

/// Derive a generator for stream `name` under `root`, further keyed by `ids`
/// (fold index, iteration, ...).
pub fn stream(root: u64, name: &str, ids: &[u64]) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    for id in ids {
        hasher.update(id.to_le_bytes());
    }
    let seed: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(seed)
}
