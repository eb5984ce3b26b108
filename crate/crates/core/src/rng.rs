//! Seed derivation. Every random stream in the toolkit is a ChaCha8 stream
//! keyed by the top-level seed and a stage label, then split by index, so
//! replaying one stage or one replicate reproduces it exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from a parent seed and a stage label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Independent stream `index` of the generator keyed by `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Stream for `(seed, label, index)`.
pub fn labeled_stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    stream(derive_seed(seed, label), index)
}
