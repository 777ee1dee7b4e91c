//! Behavior extraction from reward-free offline data.
//!
//! A reward-free dataset is relabeled with rewards from randomly initialised
//! reward networks ("intents"); one offline actor is trained per intent, and
//! the resulting behavior set is reused online through a critic-weighted
//! softmax over candidate policies. Exact oracles on small tabular and linear
//! MDPs back the analysis tools.

pub mod analysis;
pub mod config;
pub mod dataset;
pub mod error;
pub mod intent;
pub mod mdp;
pub mod neural;
pub mod offline;
pub mod pipeline;
pub mod reuse;
pub mod rng;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

/// Hex SHA-256 over the bit patterns of a float slice.
pub fn hash_f64s(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Hex SHA-256 of raw bytes.
pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
