//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream identifiers.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Stream tags.
pub mod tag {
    pub const SCENE: u64 = 1;
    pub const TASK: u64 = 2;
    pub const STREAM: u64 = 3;
    pub const INIT: u64 = 4;
    pub const ROLLOUT: u64 = 5;
    pub const BATCH: u64 = 6;
    pub const BUFFER: u64 = 7;
    pub const APPEARANCE: u64 = 8;
    pub const BASE: u64 = 10;
}
