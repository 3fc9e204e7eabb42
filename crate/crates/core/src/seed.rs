//! Seed derivation.
//!
//! Every random stream in an experiment is derived from one master seed and a
//! component name: the first eight bytes (little endian) of
//! `SHA-256(name || 0x00 || master_seed.to_le_bytes())`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, component: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(component.as_bytes());
    hasher.update([0u8]);
    hasher.update(master.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Seed for the `index`-th member of a family of streams (trees, checkpoints, ...).
pub fn derive_indexed(master: u64, component: &str, index: u64) -> u64 {
    derive_seed(master, &format!("{component}#{index}"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
