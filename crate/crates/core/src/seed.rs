//! Named sub-seed derivation.

use sha2::{Digest, Sha256};

/// Derives a stable 64-bit seed from a parent seed and a label.
///
/// Used to fan a single global seed out to pipeline stages and to
/// per-utterance randomness, so that stages stay reproducible in isolation.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
