//! Stable seed derivation, so every stochastic step is reproducible from one
//! master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `(master, stage, id)`.
///
/// Uses SHA-256 rather than `std::hash` so values are identical across
/// platforms and compiler versions.
pub fn derive_seed(master: u64, stage: &str, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((stage.len() as u64).to_le_bytes());
    h.update(stage.as_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, stage: &str, id: &str) -> ChaCha8Rng {
    rng(derive_seed(master, stage, id))
}
