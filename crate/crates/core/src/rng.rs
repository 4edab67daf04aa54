//! Seeded randomness forked per component.
//!
//! Every random choice in the system (room shuffling, proxy labels, delay
//! jitter, typo injection) draws from a generator derived from one run seed
//! and a stable label, so components stay reproducible independently of each
//! other's consumption.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Derives an independent generator for `label` from the run `seed`.
pub fn fork(seed: u64, label: &str) -> SimRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
