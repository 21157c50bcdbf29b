//! Subsystem seeds derived from one base seed by labeled hashing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// `sha256(label || 0x00 || base || indices...)`, first eight bytes.
pub fn derive_seed(base: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(base.to_le_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    rng(derive_seed(base, label, indices))
}
