//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by `(seed, label, index)`, so any task can be replayed on its own
//! regardless of how many sibling tasks ran or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64, label: &str, index: u64) -> Rng {
    Rng::from_seed(derive_key(seed, label, index))
}

/// A 64-bit child seed, for handing to APIs that take a plain seed.
pub fn child_seed(seed: u64, label: &str, index: u64) -> u64 {
    let key = derive_key(seed, label, index);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}

fn derive_key(seed: u64, label: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}
