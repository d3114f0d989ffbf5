//! Seed derivation for reproducible random streams.
//!
//! All randomness comes from ChaCha8 seeded through [`derive_seed`]:
//! `base XOR fnv1a64(label bytes || index as little-endian u64)`. Both the
//! generator and the hash are fixed-width and endian-independent, so streams
//! are identical across platforms.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn derive_seed(base: u64, label: &str, index: u64) -> u64 {
    let mut h = FnvHasher::default();
    h.write(label.as_bytes());
    h.write(&index.to_le_bytes());
    base ^ h.finish()
}

pub fn stream(base: u64, label: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, label, index))
}
