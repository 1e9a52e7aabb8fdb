//! Deterministic seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ mix64(tag)) ^ index)
}

pub fn rng_for(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}

pub mod tags {
    pub const SCENE: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const ASPECTS: u64 = 3;
    pub const SEMANTICS: u64 = 4;
    pub const CONFUSABLE: u64 = 5;
    pub const QUERIES: u64 = 6;
    pub const TRAIN_INIT: u64 = 7;
    pub const TRAIN_STEP: u64 = 8;
    pub const KMEANS: u64 = 9;
    pub const PAIRS: u64 = 10;
    pub const CANONICAL: u64 = 11;
}
