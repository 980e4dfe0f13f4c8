//! Seeded random streams.
//!
//! Every stream is derived from the master seed by hashing
//! `(seed, purpose, index)`, so results never depend on the order in which
//! streams are created or consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

pub fn stream(seed: u64, purpose: &str, index: u64) -> StreamRng {
    ChaCha8Rng::from_seed(derive_seed(seed, purpose, index))
}

/// Stream keyed by two indices (e.g. time step and grid point).
pub fn stream2(seed: u64, purpose: &str, i: u64, j: u64) -> StreamRng {
    let mut h = Sha256::new();
    h.update(derive_seed(seed, purpose, i));
    h.update(j.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}
