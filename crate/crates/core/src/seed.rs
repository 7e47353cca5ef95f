//! Deterministic per-stage seed derivation.

use sha2::{Digest, Sha256};

/// Splits a run seed into an independent stream keyed by `label`
/// (a stage name, a mixture cell, ...). Stable across platforms.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
