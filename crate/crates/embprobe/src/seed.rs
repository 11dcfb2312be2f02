//! Labeled seed derivation.
//!
//! Every source of randomness in the toolkit flows from a single base seed.
//! Sub-seeds are derived by hashing the base together with a purpose label
//! (and optionally a per-item key), so adding a new randomized stage never
//! perturbs the streams of existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a sub-seed for a named purpose.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    derive_seed_keyed(base, label, "")
}

/// Derive a sub-seed for a named purpose and a per-item key.
pub fn derive_seed_keyed(base: u64, label: &str, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest holds at least 8 bytes"))
}

/// Deterministic generator for a derived seed.
///
/// ChaCha keeps the stream stable across platforms, unlike `StdRng`
/// which is free to change between `rand` releases.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
