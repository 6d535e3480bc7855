//! Child seed derivation.
//!
//! Every random draw in the library comes from a ChaCha8 stream seeded by
//! `derive_seed(parent, label, index)`: the first eight bytes (little endian)
//! of `SHA-256(parent_le || label || 0x00 || index_le)`. Randomness therefore
//! depends on where a computation sits in the pipeline, never on the order in
//! which threads happen to run it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(parent: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
