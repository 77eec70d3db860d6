//! Deterministic seed fan-out.
//!
//! Every stage and sub-task derives its own RNG from the single global
//! seed plus a stable name, so adding or reordering stages never shifts
//! the randomness of the others.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

fn digest(global_seed: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update([0u8]);
    h.update(name.as_bytes());
    h.finalize().into()
}

/// A fresh RNG for the given name under the global seed.
pub fn stage_rng(global_seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(global_seed, name))
}

/// A derived `u64` seed for APIs that take one.
pub fn derive_seed(global_seed: u64, name: &str) -> u64 {
    let d = digest(global_seed, name);
    u64::from_le_bytes(d[..8].try_into().expect("digest is long enough"))
}
