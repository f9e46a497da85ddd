//! Seeding helpers.
//!
//! Every random stream in the crate is a `ChaCha8Rng` (the ChaCha stream
//! cipher with 8 rounds). Child seeds for per-sequence streams are
//! `seed ^ splitmix64(index)`, so a sequence's stream depends only on the
//! master seed and its index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The SplitMix64 finaliser.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed ^ splitmix64(index)
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_stream(seed: u64, index: u64) -> ChaCha8Rng {
    stream(derive_seed(seed, index))
}
